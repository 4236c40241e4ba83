use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use catforge_core::candidates::import_candidates;
use catforge_core::dataset::{
    build_category_ranking_dataset, build_end_to_end, build_parent_id_dataset, excluded_ids, read_ranking_csv,
    write_ranking_csv, EndToEndCase, EndToEndConfig, SnapshotTriple,
};
use catforge_core::files::{read_jsonl, write_jsonl};
use catforge_core::index::IndexSet;
use catforge_core::kb::load_inputs;
use catforge_core::metrics::{EvalReport, EvalRun, REPORT_METRICS};
use catforge_core::pipeline::{
    evaluate, training_from_cases, training_from_ranking_examples, CaseSuggestions, Models, PlacementStats,
};
use catforge_core::synth::{generate, SynthConfig};
use catforge_core::topic::TopicGraph;
use catforge_core::{CategoryHierarchy, KbContext};
use catforge_server::{AppState, ServiceConfig};
use serde::Serialize;
use serde_json::json;

use crate::config::Config;
use crate::workspace::{self as ws, Layout, SourceStamp};
use crate::Command;

pub fn run(command: Command, config: Config) -> Result<()> {
    config.params.validate()?;
    let layout = Layout::new(&config);
    match command {
        Command::Ingest => ingest(&config, &layout),
        Command::Index => index(&config, &layout),
        Command::Graph => graph(&config, &layout),
        Command::BuildDatasets => build_datasets(&config, &layout),
        Command::Train => train(&config, &layout),
        Command::Suggest {
            cases,
            out,
            candidates,
            candidates_tag,
            flat,
        } => suggest(&config, &layout, cases, out, candidates, &candidates_tag, flat),
        Command::Evaluate { suggestions, split, out } => evaluate_cmd(&layout, &suggestions, &split, out),
        Command::Serve { bind } => serve(&config, &layout, bind),
        Command::Synth { .. } => bail!("synth does not take a config"),
    }
}

/// Prints a one-line JSON summary of a finished stage.
fn done(stage: &str, summary: serde_json::Value) {
    println!("{}", json!({"stage": stage, "ok": true, "summary": summary}));
}

fn ingest(config: &Config, layout: &Layout) -> Result<()> {
    let (h, report) = CategoryHierarchy::load(&config.data.categories, &config.data.entities)?;
    let dir = layout.kb_dir();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    h.save(&dir.join("categories.jsonl"), &dir.join("entities.jsonl"))?;
    ws::write_json(&dir.join("load_report.json"), &report)?;
    if report.dropped_total() > 0 {
        log::warn!("dropped {} unresolved references; see load_report.json", report.dropped_total());
    }
    done(
        "ingest",
        json!({"categories": report.categories, "entities": report.entities, "dropped": report.dropped_total(), "out": dir}),
    );
    Ok(())
}

fn index(config: &Config, layout: &Layout) -> Result<()> {
    let (h, dir) = ws::engine_kb(config, layout)?;
    let started = Instant::now();
    let set = IndexSet::build(&h);
    let out = layout.index_dir();
    set.save_dir(&out)?;
    SourceStamp::of(&h, &dir).write(&out)?;
    done(
        "index",
        json!({"kb": dir, "categories": h.num_categories(), "seconds": started.elapsed().as_secs_f64(), "out": out}),
    );
    Ok(())
}

fn graph(config: &Config, layout: &Layout) -> Result<()> {
    let (h, dir) = ws::engine_kb(config, layout)?;
    let excluded = excluded_ids(&h, &ws::exclusions(config)?);
    let g = TopicGraph::build(&h, &excluded, &ws::lexicon(config)?);
    let out = layout.graph();
    std::fs::create_dir_all(&layout.root).with_context(|| format!("creating {}", layout.root.display()))?;
    g.save_tsv(&out)?;
    SourceStamp::of(&h, &dir).write(&out)?;
    done(
        "graph",
        json!({"kb": dir, "edges": g.num_edges(), "pairs": g.pair_count(), "excluded": excluded.len(), "out": out}),
    );
    Ok(())
}

fn build_datasets(config: &Config, layout: &Layout) -> Result<()> {
    let full = ws::full_kb(layout)?;
    let out = layout.datasets_dir();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut summary = serde_json::Map::new();

    if let Some(inputs_path) = &config.data.inputs {
        let inputs = load_inputs(inputs_path)?;
        let cfg = EndToEndConfig {
            min_entities: config.datasets.min_entities,
            exclusions: ws::exclusions(config)?,
            seed: config.datasets.seed,
        };
        let data = build_end_to_end(&full, &inputs, &cfg)?;
        write_jsonl(&layout.cases(), &data.cases)?;
        ws::write_json(&layout.split(), &data.split)?;
        ws::write_json(&out.join("end_to_end_report.json"), &data.report)?;
        let working = layout.working_dir();
        std::fs::create_dir_all(&working).with_context(|| format!("creating {}", working.display()))?;
        data.working
            .save(&working.join("categories.jsonl"), &working.join("entities.jsonl"))?;
        summary.insert(
            "end_to_end".into(),
            json!({
                "cases": data.cases.len(),
                "train": data.split.train.len(),
                "val": data.split.val.len(),
                "test": data.split.test.len(),
                "report": data.report,
            }),
        );
    } else {
        log::info!("no [data].inputs configured; skipping the end-to-end dataset");
    }

    let snaps = &config.datasets.snapshots;
    if !snaps.is_empty() {
        if snaps.len() != 3 {
            bail!("[[datasets.snapshots]] needs exactly three entries, found {}", snaps.len());
        }
        let mut loaded = Vec::with_capacity(3);
        for s in snaps {
            loaded.push(CategoryHierarchy::load(&s.categories, &s.entities)?.0);
        }
        let tags = [snaps[0].tag.clone(), snaps[1].tag.clone(), snaps[2].tag.clone()];
        let loaded: [CategoryHierarchy; 3] = loaded.try_into().expect("three snapshots");
        let triple = SnapshotTriple::new(tags, loaded)?;
        let rows = build_category_ranking_dataset(
            &triple,
            config.datasets.ranking_positives,
            config.datasets.ranking_negatives,
            config.datasets.seed,
        )?;
        write_ranking_csv(&layout.ranking(), &rows)?;
        summary.insert("category_ranking".into(), json!({"rows": rows.len()}));
    }

    if config.datasets.parent_id_cases > 0 {
        let rows = build_parent_id_dataset(&full, config.datasets.parent_id_cases, config.datasets.seed)?;
        write_jsonl(&out.join("parent_identification.jsonl"), &rows)?;
        summary.insert("parent_identification".into(), json!({"rows": rows.len()}));
    }

    if summary.is_empty() {
        bail!("nothing to build: set [data].inputs, [[datasets.snapshots]] or [datasets].parent_id_cases");
    }
    done("build-datasets", serde_json::Value::Object(summary));
    Ok(())
}

#[derive(Serialize)]
struct ModelReport {
    rows: usize,
    positives: usize,
    trees: usize,
    oob_mse: Option<f64>,
    importances: BTreeMap<String, f64>,
}

fn model_report(m: &catforge_core::forest::RandomForest, targets: &[f64]) -> ModelReport {
    ModelReport {
        rows: targets.len(),
        positives: targets.iter().filter(|t| **t > 0.5).count(),
        trees: m.num_trees(),
        oob_mse: m.oob_mse(),
        importances: m.schema().names().into_iter().zip(m.feature_importances().iter().copied()).collect(),
    }
}

fn train(config: &Config, layout: &Layout) -> Result<()> {
    let started = Instant::now();
    let ctx = ws::engine_context(config, layout)?;
    let params = &config.params;
    let mut set = catforge_core::pipeline::TrainingSet::default();
    let mut sources = Vec::new();

    if layout.cases().exists() {
        let split = ws::split(layout)?;
        let train_ids: BTreeSet<&String> = split.train.iter().collect();
        let cases: Vec<EndToEndCase> = ws::cases(layout)?
            .into_iter()
            .filter(|c| train_ids.contains(&c.input.case_id))
            .collect();
        set.extend(training_from_cases(&ctx, params, &cases)?);
        sources.push(json!({"end_to_end_cases": cases.len()}));
    }
    if layout.ranking().exists() {
        let examples = read_ranking_csv(&layout.ranking())?;
        // Snapshot examples are featurized against the oldest snapshot they came from.
        let t1 = &config.datasets.snapshots.first().context("category_ranking.csv exists but no snapshots are configured")?;
        let (h, _) = CategoryHierarchy::load(&t1.categories, &t1.entities)?;
        let h = Arc::new(h);
        let snap_ctx = KbContext::build(h.clone(), ws::lexicon(config)?, &excluded_ids(&h, &ws::exclusions(config)?));
        set.extend(training_from_ranking_examples(&snap_ctx, params, &examples)?);
        sources.push(json!({"category_ranking_rows": examples.len()}));
    }
    if sources.is_empty() {
        return Err(ws::MissingStage {
            stage: "build-datasets",
            path: layout.cases(),
        }
        .into());
    }
    let models = Models::train(params, &set)?;
    models.save(&layout.models_dir())?;
    let report = json!({
        "sources": sources,
        "params": params,
        "initial": model_report(&models.initial, &set.initial_targets),
        "final": model_report(&models.final_, &set.final_targets),
        "seconds": started.elapsed().as_secs_f64(),
    });
    ws::write_json(&layout.models_dir().join("train_report.json"), &report)?;
    done(
        "train",
        json!({
            "initial_rows": set.initial_targets.len(),
            "final_rows": set.final_targets.len(),
            "seconds": started.elapsed().as_secs_f64(),
            "out": layout.models_dir(),
        }),
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn suggest(
    config: &Config,
    layout: &Layout,
    cases: Option<PathBuf>,
    out: Option<PathBuf>,
    candidates: Option<PathBuf>,
    tag: &str,
    flat: bool,
) -> Result<()> {
    let cases_path = cases
        .or_else(|| config.data.inputs.clone())
        .context("no input cases: pass --cases or set [data].inputs")?;
    let out = out.unwrap_or_else(|| layout.root.join("suggestions.jsonl"));
    let inputs = load_inputs(&cases_path)?;
    let engine = ws::engine(config, layout)?;
    let imported = match candidates {
        Some(p) => {
            let known: BTreeSet<String> = inputs.iter().map(|i| i.case_id.clone()).collect();
            import_candidates(&p, tag, Some(&known))?.by_case
        }
        None => BTreeMap::new(),
    };
    let started = Instant::now();
    let results = engine.suggest_all(&inputs, &imported)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    if flat {
        let lines: Vec<_> = results.iter().flat_map(|r| r.lines()).collect();
        write_jsonl(&out, &lines)?;
    } else {
        write_jsonl(&out, &results)?;
    }
    done(
        "suggest",
        json!({
            "cases": results.len(),
            "suggestions": results.iter().map(|r| r.ranked.suggestions.len()).sum::<usize>(),
            "seconds": started.elapsed().as_secs_f64(),
            "out": out,
        }),
    );
    Ok(())
}

fn parse_named(spec: &str) -> Result<(String, PathBuf)> {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => {
            let path = PathBuf::from(spec);
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .with_context(|| format!("cannot name suggestions file {spec}"))?
                .to_string();
            Ok((name, path))
        }
    }
}

fn evaluate_cmd(layout: &Layout, specs: &[String], split: &str, out: Option<PathBuf>) -> Result<()> {
    let all = ws::cases(layout)?;
    let s = ws::split(layout)?;
    let ids: Option<BTreeSet<&String>> = match split {
        "train" => Some(s.train.iter().collect()),
        "val" => Some(s.val.iter().collect()),
        "test" => Some(s.test.iter().collect()),
        "all" => None,
        other => bail!("unknown split `{other}` (expected train, val, test or all)"),
    };
    let cases: Vec<EndToEndCase> = all
        .into_iter()
        .filter(|c| ids.as_ref().is_none_or(|ids| ids.contains(&c.input.case_id)))
        .collect();
    if cases.is_empty() {
        bail!("split `{split}` has no cases");
    }
    let mut runs: Vec<EvalRun> = Vec::new();
    let mut placement: BTreeMap<String, PlacementStats> = BTreeMap::new();
    for spec in specs {
        let (name, path) = parse_named(spec)?;
        if runs.iter().any(|r| r.system == name) {
            bail!("system name `{name}` given twice");
        }
        let suggestions: Vec<CaseSuggestions> = read_jsonl(&path)?;
        let (run, stats) = evaluate(&name, &cases, &suggestions)?;
        runs.push(run);
        placement.insert(name, stats);
    }
    let report = EvalReport::build(&runs, &REPORT_METRICS)?;
    let systems: Vec<String> = runs.iter().map(|r| r.system.clone()).collect();
    let table = report.table(&systems, &REPORT_METRICS);
    let out = out.unwrap_or_else(|| layout.root.join("eval"));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    ws::write_json(&out.join("eval_report.json"), &json!({"split": split, "report": report, "placement": placement}))?;
    std::fs::write(out.join("eval_table.txt"), &table).with_context(|| format!("writing {}", out.display()))?;
    print!("{table}");
    done("evaluate", json!({"cases": cases.len(), "systems": systems, "out": out}));
    Ok(())
}

fn serve(config: &Config, layout: &Layout, bind: Option<String>) -> Result<()> {
    let bind = bind.unwrap_or_else(|| config.service.bind.clone());
    let addr: SocketAddr = bind.parse().with_context(|| format!("invalid bind address `{bind}`"))?;
    let engine = ws::engine(config, layout)?;
    let service = ServiceConfig {
        log_path: config.decision_log(),
        refresh_secs: config.service.refresh_secs,
        snapshot_dir: Some(config.snapshot_dir()),
        ui_dir: config.service.ui_dir.clone(),
        graph_exclusions: ws::exclusions(config)?,
    };
    let state = AppState::open(engine, service)?;
    let runtime = tokio::runtime::Runtime::new().context("starting async runtime")?;
    runtime.block_on(catforge_server::serve(state, addr))?;
    Ok(())
}

const SYNTH_CONFIG: &str = r#"# Synthetic demo knowledge base.
[data]
categories = "categories.jsonl"
entities = "entities.jsonl"
inputs = "inputs.jsonl"
work_dir = "work"

[params]
n_trees = 1000

[service]
bind = "127.0.0.1:8080"
"#;

pub fn synth(out: &Path, seed: u64) -> Result<()> {
    let kb = generate(&SynthConfig {
        seed,
        ..Default::default()
    })?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    kb.hierarchy
        .save(&out.join("categories.jsonl"), &out.join("entities.jsonl"))?;
    write_jsonl(&out.join("inputs.jsonl"), &kb.inputs)?;
    std::fs::write(out.join("catforge.toml"), SYNTH_CONFIG).with_context(|| format!("writing {}", out.display()))?;
    done(
        "synth",
        json!({
            "categories": kb.hierarchy.num_categories(),
            "entities": kb.hierarchy.num_entities(),
            "inputs": kb.inputs.len(),
            "out": out,
        }),
    );
    Ok(())
}
