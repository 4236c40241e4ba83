//! TOML configuration. Relative paths resolve against the config file's
//! directory.

use std::path::{Path, PathBuf};

use catforge_core::pipeline::EngineParams;
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub params: EngineParams,
    #[serde(default)]
    pub datasets: DatasetConfig,
    #[serde(default)]
    pub service: ServiceSection,
}

/// Which hierarchy the engine stages (index, graph, train, suggest, serve)
/// operate on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KbView {
    /// The working hierarchy from build-datasets when present, else the full one.
    #[default]
    Auto,
    Full,
    Working,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub categories: PathBuf,
    pub entities: PathBuf,
    /// Entity-set inputs used to build the end-to-end dataset.
    pub inputs: Option<PathBuf>,
    /// All stage outputs live here.
    pub work_dir: PathBuf,
    /// One preposition per line; replaces the built-in list.
    pub prepositions: Option<PathBuf>,
    /// One category label per line; replaces the built-in exclusion list.
    pub exclusions: Option<PathBuf>,
    pub kb: KbView,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            categories: "categories.jsonl".into(),
            entities: "entities.jsonl".into(),
            inputs: None,
            work_dir: "work".into(),
            prepositions: None,
            exclusions: None,
            kb: KbView::Auto,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotSource {
    pub tag: String,
    pub categories: PathBuf,
    pub entities: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub min_entities: usize,
    pub seed: u64,
    /// Three dated snapshots, oldest first, for the category-ranking dataset.
    pub snapshots: Vec<SnapshotSource>,
    pub ranking_positives: usize,
    pub ranking_negatives: usize,
    /// Size of the parent-identification sample; 0 skips it.
    pub parent_id_cases: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            min_entities: catforge_core::dataset::DEFAULT_MIN_ENTITIES,
            seed: 42,
            snapshots: Vec::new(),
            ranking_positives: 0,
            ranking_negatives: 0,
            parent_id_cases: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub bind: String,
    /// Defaults to `<work_dir>/decisions.jsonl`.
    pub decision_log: Option<PathBuf>,
    pub refresh_secs: u64,
    /// Defaults to `<work_dir>/live`.
    pub snapshot_dir: Option<PathBuf>,
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            decision_log: None,
            refresh_secs: 60,
            snapshot_dir: None,
            ui_dir: None,
        }
    }
}

/// Flag values that override `[params]`.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub k: Option<usize>,
    pub pool_k: Option<usize>,
    pub expansion: Option<bool>,
    pub scorer: Option<catforge_core::ranking::ParentScorer>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, p: &mut EngineParams) {
        if let Some(v) = self.alpha {
            p.alpha = v;
        }
        if let Some(v) = self.gamma {
            p.gamma = v;
        }
        if let Some(v) = self.k {
            p.k = v;
        }
        if let Some(v) = self.pool_k {
            p.pool_k = v;
        }
        if let Some(v) = self.expansion {
            p.expansion = v;
        }
        if let Some(v) = self.scorer {
            p.scorer = v;
        }
        if let Some(v) = self.seed {
            p.seed = v;
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn resolve_opt(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        resolve(base, p);
    }
}

impl Config {
    pub fn parse(text: &str, base: &Path) -> Result<Self, toml::de::Error> {
        let mut c: Config = toml::from_str(text)?;
        let d = &mut c.data;
        resolve(base, &mut d.categories);
        resolve(base, &mut d.entities);
        resolve(base, &mut d.work_dir);
        resolve_opt(base, &mut d.inputs);
        resolve_opt(base, &mut d.prepositions);
        resolve_opt(base, &mut d.exclusions);
        for s in &mut c.datasets.snapshots {
            resolve(base, &mut s.categories);
            resolve(base, &mut s.entities);
        }
        let s = &mut c.service;
        resolve_opt(base, &mut s.decision_log);
        resolve_opt(base, &mut s.snapshot_dir);
        resolve_opt(base, &mut s.ui_dir);
        Ok(c)
    }

    pub fn decision_log(&self) -> PathBuf {
        self.service
            .decision_log
            .clone()
            .unwrap_or_else(|| self.data.work_dir.join("decisions.jsonl"))
    }

    pub fn snapshot_dir(&self) -> PathBuf {
        self.service
            .snapshot_dir
            .clone()
            .unwrap_or_else(|| self.data.work_dir.join("live"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use catforge_core::ranking::ParentScorer;

    #[test]
    fn empty_config_uses_defaults() {
        let c = Config::parse("", Path::new("/base")).unwrap();
        assert_eq!(c.params, EngineParams::default());
        assert_eq!(c.data.work_dir, Path::new("/base/work"));
        assert_eq!(c.decision_log(), Path::new("/base/work/decisions.jsonl"));
        assert_eq!(c.service.refresh_secs, 60);
        assert_eq!(c.data.kb, KbView::Auto);
    }

    #[test]
    fn paths_and_params_parse() {
        let text = r#"
            [data]
            categories = "kb/c.jsonl"
            entities = "/abs/e.jsonl"
            kb = "full"

            [params]
            alpha = 3.0
            scorer = "bm25"

            [[datasets.snapshots]]
            tag = "2019"
            categories = "s/c.jsonl"
            entities = "s/e.jsonl"
        "#;
        let c = Config::parse(text, Path::new("/cfg")).unwrap();
        assert_eq!(c.data.categories, Path::new("/cfg/kb/c.jsonl"));
        assert_eq!(c.data.entities, Path::new("/abs/e.jsonl"));
        assert_eq!(c.data.kb, KbView::Full);
        assert_eq!(c.params.alpha, 3.0);
        assert_eq!(c.params.gamma, EngineParams::default().gamma);
        assert_eq!(c.params.scorer, ParentScorer::Bm25);
        assert_eq!(c.datasets.snapshots[0].categories, Path::new("/cfg/s/c.jsonl"));
    }

    #[test]
    fn unknown_sections_are_rejected() {
        assert!(Config::parse("[bogus]\nx = 1", Path::new(".")).is_err());
        assert!(Config::parse("[data]\ncategory = \"x\"", Path::new(".")).is_err());
    }

    #[test]
    fn overrides_replace_only_given_values() {
        let mut p = EngineParams::default();
        Overrides {
            gamma: Some(0.3),
            expansion: Some(false),
            ..Default::default()
        }
        .apply(&mut p);
        assert_eq!(p.gamma, 0.3);
        assert!(!p.expansion);
        assert_eq!(p.alpha, EngineParams::default().alpha);
    }
}
