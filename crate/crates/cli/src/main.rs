mod commands;
mod config;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::BoolishValueParser;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::Overrides;

#[derive(Debug, Parser)]
#[command(name = "catforge", version, about = "Generate and place new categories for entity sets")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, short = 'c', global = true, default_value = "catforge.toml")]
    config: PathBuf,

    /// One-preposition-per-line file replacing the built-in list.
    #[arg(long, global = true)]
    prepositions: Option<PathBuf>,

    #[command(flatten)]
    overrides: OverrideArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct OverrideArgs {
    /// Query expansion threshold divisor.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Minimum final suggestion score.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Top hits per content-feature group.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Parent pool size per candidate.
    #[arg(long = "pool-k", global = true)]
    pool_k: Option<usize>,
    /// Expand parent queries through the topic graph (true/false).
    #[arg(long, global = true, value_parser = BoolishValueParser::new())]
    expansion: Option<bool>,
    /// Parent scorer: bm25, hierarchy or combined.
    #[arg(long, global = true)]
    scorer: Option<catforge_core::ranking::ParentScorer>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

impl From<OverrideArgs> for Overrides {
    fn from(a: OverrideArgs) -> Self {
        Self {
            alpha: a.alpha,
            gamma: a.gamma,
            k: a.k,
            pool_k: a.pool_k,
            expansion: a.expansion,
            scorer: a.scorer,
            seed: a.seed,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and validate the hierarchy, writing a canonical copy.
    Ingest,
    /// Build the four inverted indexes.
    Index,
    /// Build the topic graph.
    Graph,
    /// Build the end-to-end, category-ranking and parent-identification datasets.
    BuildDatasets,
    /// Train the initial and final ranking models.
    Train,
    /// Suggest categories for every entity set in a JSONL file.
    Suggest {
        #[arg(long)]
        cases: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Externally generated candidates (case_id, label, score per line).
        #[arg(long)]
        candidates: Option<PathBuf>,
        /// Name recorded for imported candidates.
        #[arg(long, default_value = "imported")]
        candidates_tag: String,
        /// Write one line per suggestion instead of one per case.
        #[arg(long)]
        flat: bool,
    },
    /// Score suggestion files against the end-to-end ground truth.
    Evaluate {
        /// Suggestion files as `name=path` or `path` (named by file stem).
        #[arg(long = "suggestions", required = true)]
        suggestions: Vec<String>,
        /// Which split to score: train, val, test or all.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the HTTP suggestion and decision service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
    /// Write a synthetic hierarchy, inputs and config into a directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        synth_seed: u64,
    },
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    if let Some(c) = e.downcast_ref::<catforge_core::Error>() {
        return c.kind();
    }
    if let Some(s) = e.downcast_ref::<catforge_server::ServiceError>() {
        return match s {
            catforge_server::ServiceError::Core(c) => c.kind(),
            catforge_server::ServiceError::Io { .. } => "io",
            catforge_server::ServiceError::Replay { .. } => "replay",
            _ => "service",
        };
    }
    if e.downcast_ref::<toml::de::Error>().is_some() {
        return "config";
    }
    if e.downcast_ref::<workspace::MissingStage>().is_some() {
        return "missing_stage";
    }
    "error"
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Command::Synth { out, synth_seed } = &cli.command {
        return match commands::synth(out, *synth_seed) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("{}", json!({"error": error_kind(&e), "message": format!("{e:#}")}));
                ExitCode::FAILURE
            }
        };
    }
    let config = match workspace::load_config(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}", json!({"error": "config", "message": format!("{e:#}"), "path": cli.config}));
            return ExitCode::from(2);
        }
    };
    let mut config = config;
    Overrides::from(cli.overrides).apply(&mut config.params);
    if let Some(p) = cli.prepositions {
        config.data.prepositions = Some(p);
    }
    match commands::run(cli.command, config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": error_kind(&e), "message": format!("{e:#}")}));
            ExitCode::FAILURE
        }
    }
}
