//! Layout of the work directory and loaders for each stage's artifacts.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use catforge_core::dataset::{default_exclusions, load_exclusions, EndToEndCase, Split};
use catforge_core::files::read_jsonl;
use catforge_core::index::IndexSet;
use catforge_core::pipeline::{Engine, Models};
use catforge_core::text::Lexicon;
use catforge_core::topic::TopicGraph;
use catforge_core::{CategoryHierarchy, KbContext};
use serde::{Deserialize, Serialize};

use crate::config::{Config, KbView};

/// A stage ran before one of its inputs existed.
#[derive(Debug)]
pub struct MissingStage {
    pub stage: &'static str,
    pub path: PathBuf,
}

impl std::fmt::Display for MissingStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} not found; run `catforge {}` first", self.path.display(), self.stage)
    }
}

impl std::error::Error for MissingStage {}

pub fn load_config(path: &Path) -> Result<Config> {
    if !path.is_file() {
        bail!("config file {} not found", path.display());
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    Config::parse(&text, base).with_context(|| format!("parsing {}", path.display()))
}

pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(config: &Config) -> Self {
        Self {
            root: config.data.work_dir.clone(),
        }
    }

    pub fn kb_dir(&self) -> PathBuf {
        self.root.join("kb")
    }
    pub fn datasets_dir(&self) -> PathBuf {
        self.root.join("datasets")
    }
    pub fn working_dir(&self) -> PathBuf {
        self.datasets_dir().join("working")
    }
    pub fn cases(&self) -> PathBuf {
        self.datasets_dir().join("cases.jsonl")
    }
    pub fn split(&self) -> PathBuf {
        self.datasets_dir().join("split.json")
    }
    pub fn ranking(&self) -> PathBuf {
        self.datasets_dir().join("category_ranking.csv")
    }
    pub fn index_dir(&self) -> PathBuf {
        self.root.join("index")
    }
    pub fn graph(&self) -> PathBuf {
        self.root.join("graph.tsv")
    }
    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }
}

fn require(path: PathBuf, stage: &'static str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(MissingStage { stage, path }.into())
    }
}

pub fn lexicon(config: &Config) -> Result<Lexicon> {
    let lex = Lexicon::default();
    Ok(match &config.data.prepositions {
        Some(p) => lex.with_prepositions_file(p)?,
        None => lex,
    })
}

pub fn exclusions(config: &Config) -> Result<BTreeSet<String>> {
    Ok(match &config.data.exclusions {
        Some(p) => load_exclusions(p)?,
        None => default_exclusions(),
    })
}

fn load_kb_dir(dir: &Path) -> Result<CategoryHierarchy> {
    let (h, _) = CategoryHierarchy::load(&dir.join("categories.jsonl"), &dir.join("entities.jsonl"))?;
    Ok(h)
}

pub fn full_kb(layout: &Layout) -> Result<CategoryHierarchy> {
    load_kb_dir(&require(layout.kb_dir(), "ingest")?)
}

/// The hierarchy the engine stages run on, with the directory it came from.
pub fn engine_kb(config: &Config, layout: &Layout) -> Result<(CategoryHierarchy, PathBuf)> {
    let dir = match config.data.kb {
        KbView::Full => require(layout.kb_dir(), "ingest")?,
        KbView::Working => require(layout.working_dir(), "build-datasets")?,
        KbView::Auto if layout.working_dir().exists() => layout.working_dir(),
        KbView::Auto => require(layout.kb_dir(), "ingest")?,
    };
    Ok((load_kb_dir(&dir)?, dir))
}

/// Identifies the hierarchy an index or graph was built from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceStamp {
    pub kb_dir: PathBuf,
    pub categories: usize,
    pub entities: usize,
}

impl SourceStamp {
    pub fn of(h: &CategoryHierarchy, dir: &Path) -> Self {
        Self {
            kb_dir: dir.to_path_buf(),
            categories: h.num_categories(),
            entities: h.num_entities(),
        }
    }

    fn path_for(artifact: &Path) -> PathBuf {
        let mut name = artifact.file_name().unwrap_or_default().to_os_string();
        name.push(".source.json");
        artifact.with_file_name(name)
    }

    pub fn write(&self, artifact: &Path) -> Result<()> {
        let path = Self::path_for(artifact);
        std::fs::write(&path, serde_json::to_string_pretty(self)?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn check(&self, artifact: &Path, stage: &str) -> Result<()> {
        let path = Self::path_for(artifact);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let built: SourceStamp = serde_json::from_str(&text)?;
        if &built != self {
            bail!(
                "{} was built from {} ({} categories), but the engine hierarchy is {} ({} categories); rerun `catforge {stage}`",
                artifact.display(),
                built.kb_dir.display(),
                built.categories,
                self.kb_dir.display(),
                self.categories
            );
        }
        Ok(())
    }
}

/// Engine hierarchy together with its prebuilt index and graph.
pub fn engine_context(config: &Config, layout: &Layout) -> Result<KbContext> {
    let (h, dir) = engine_kb(config, layout)?;
    let stamp = SourceStamp::of(&h, &dir);
    let index_dir = require(layout.index_dir(), "index")?;
    stamp.check(&index_dir, "index")?;
    let graph_path = require(layout.graph(), "graph")?;
    stamp.check(&graph_path, "graph")?;
    let indexes = IndexSet::load_dir(&index_dir)?;
    let graph = TopicGraph::load_tsv(&graph_path)?;
    Ok(KbContext::from_parts(Arc::new(h), lexicon(config)?, indexes, graph))
}

pub fn engine(config: &Config, layout: &Layout) -> Result<Engine> {
    let ctx = engine_context(config, layout)?;
    let models = Models::load(&require(layout.models_dir(), "train")?)?;
    Ok(Engine::new(Arc::new(ctx), config.params.clone(), Arc::new(models))?)
}

pub fn cases(layout: &Layout) -> Result<Vec<EndToEndCase>> {
    Ok(read_jsonl(&require(layout.cases(), "build-datasets")?)?)
}

pub fn split(layout: &Layout) -> Result<Split> {
    let path = require(layout.split(), "build-datasets")?;
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
