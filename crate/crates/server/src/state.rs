//! Versioned snapshots with a single writer.
//!
//! Readers clone an `Arc<Snapshot>` and never block the writer for longer
//! than a pointer swap. The live hierarchy is republished after every
//! decision; the engine (indexes, topic graph) is rebuilt either inline or
//! by a background task, so suggestions may lag by at most the configured
//! staleness bound.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use catforge_core::dataset::excluded_ids;
use catforge_core::pipeline::Engine;
use catforge_core::{CategoryHierarchy, KbContext};
use tokio::sync::{Mutex, Notify};

use crate::decisions::{apply, replay, DecisionLog, DecisionRecord, SuggestionRef, Verdict};
use crate::error::ServiceError;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub log_path: PathBuf,
    /// Upper bound on index staleness after a decision; 0 refreshes inline.
    pub refresh_secs: u64,
    /// Where to write the hierarchy on shutdown.
    pub snapshot_dir: Option<PathBuf>,
    /// Static files for the review console.
    pub ui_dir: Option<PathBuf>,
    /// Labels left out of the topic graph on refresh.
    pub graph_exclusions: BTreeSet<String>,
}

impl ServiceConfig {
    pub fn new(log_path: impl Into<PathBuf>) -> Self {
        Self {
            log_path: log_path.into(),
            refresh_secs: 60,
            snapshot_dir: None,
            ui_dir: None,
            graph_exclusions: BTreeSet::new(),
        }
    }
}

pub struct Snapshot {
    /// Bumped on every accepted decision.
    pub version: u64,
    pub hierarchy: Arc<CategoryHierarchy>,
    pub engine: Engine,
    /// Hierarchy version the engine was built from.
    pub engine_version: u64,
}

impl Snapshot {
    pub fn is_stale(&self) -> bool {
        self.engine_version != self.version
    }
}

struct Writer {
    hierarchy: CategoryHierarchy,
    log: DecisionLog,
    records: Vec<DecisionRecord>,
    version: u64,
}

struct Shared {
    config: ServiceConfig,
    snapshot: RwLock<Arc<Snapshot>>,
    writer: Mutex<Writer>,
    refresh: Notify,
}

#[derive(Clone)]
pub struct AppState {
    shared: Arc<Shared>,
}

fn rebuild(engine: &Engine, hierarchy: Arc<CategoryHierarchy>, exclusions: &BTreeSet<String>) -> Engine {
    let ids = excluded_ids(&hierarchy, exclusions);
    let ctx = KbContext::build(hierarchy, engine.ctx.lexicon.clone(), &ids);
    engine.with_context(Arc::new(ctx))
}

impl AppState {
    /// Starts from the engine's hierarchy and replays any decisions already
    /// in the log.
    pub fn open(engine: Engine, config: ServiceConfig) -> Result<Self, ServiceError> {
        let (log, records) = DecisionLog::open(&config.log_path)?;
        let (engine, hierarchy) = if records.is_empty() {
            let h = (*engine.ctx.hierarchy).clone();
            (engine, h)
        } else {
            let h = replay(&engine.ctx.hierarchy, &records)?;
            log::info!("replayed {} decisions from {}", records.len(), config.log_path.display());
            (rebuild(&engine, Arc::new(h.clone()), &config.graph_exclusions), h)
        };
        let snapshot = Snapshot {
            version: 0,
            hierarchy: engine.ctx.hierarchy.clone(),
            engine,
            engine_version: 0,
        };
        Ok(Self {
            shared: Arc::new(Shared {
                config,
                snapshot: RwLock::new(Arc::new(snapshot)),
                writer: Mutex::new(Writer {
                    hierarchy,
                    log,
                    records,
                    version: 0,
                }),
                refresh: Notify::new(),
            }),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.shared.config
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.shared.snapshot.read().expect("snapshot lock").clone()
    }

    pub async fn records(&self) -> Vec<DecisionRecord> {
        self.shared.writer.lock().await.records.clone()
    }

    pub async fn hierarchy(&self) -> CategoryHierarchy {
        self.shared.writer.lock().await.hierarchy.clone()
    }

    /// Validates, applies and logs one decision.
    pub async fn decide(
        &self,
        suggestion: SuggestionRef,
        verdict: Verdict,
        editor: String,
    ) -> Result<DecisionRecord, ServiceError> {
        let mut w = self.shared.writer.lock().await;
        let mut suggestion = suggestion;
        suggestion.entities.retain(|e| w.hierarchy.entity(e).is_some());
        let mut record = DecisionRecord {
            seq: w.records.last().map_or(1, |r| r.seq + 1),
            suggestion,
            verdict,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            editor,
            category_id: None,
        };
        if let Some(label) = record.inserted_label() {
            if label.trim().is_empty() {
                return Err(ServiceError::BadRequest("label must not be empty".into()));
            }
            if !w.hierarchy.contains_category(&record.suggestion.parent_id) {
                return Err(ServiceError::Conflict(format!(
                    "parent `{}` no longer exists",
                    record.suggestion.parent_id
                )));
            }
        }
        record.category_id = apply(&mut w.hierarchy, &record)?;
        if let Err(e) = w.log.append(&record) {
            if let Some(id) = &record.category_id {
                w.hierarchy.remove_category(id)?;
            }
            return Err(e);
        }
        w.records.push(record.clone());
        if record.category_id.is_some() {
            w.version += 1;
            let hierarchy = Arc::new(w.hierarchy.clone());
            let version = w.version;
            let current = self.snapshot();
            let (engine, engine_version) = if self.shared.config.refresh_secs == 0 {
                let exclusions = self.shared.config.graph_exclusions.clone();
                let base = current.engine.clone();
                let h = hierarchy.clone();
                let engine = tokio::task::spawn_blocking(move || rebuild(&base, h, &exclusions))
                    .await
                    .map_err(|e| ServiceError::Internal(e.to_string()))?;
                (engine, version)
            } else {
                (current.engine.clone(), current.engine_version)
            };
            self.publish(Snapshot {
                version,
                hierarchy,
                engine,
                engine_version,
            });
            self.shared.refresh.notify_one();
        }
        Ok(record)
    }

    fn publish(&self, snapshot: Snapshot) {
        *self.shared.snapshot.write().expect("snapshot lock") = Arc::new(snapshot);
    }

    /// Rebuilds the engine if it lags behind the hierarchy.
    pub async fn refresh_now(&self) -> Result<bool, ServiceError> {
        let current = self.snapshot();
        if !current.is_stale() {
            return Ok(false);
        }
        let exclusions = self.shared.config.graph_exclusions.clone();
        let (base, h, version) = (current.engine.clone(), current.hierarchy.clone(), current.version);
        let engine = tokio::task::spawn_blocking(move || rebuild(&base, h, &exclusions))
            .await
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        let mut slot = self.shared.snapshot.write().expect("snapshot lock");
        if slot.engine_version < version {
            *slot = Arc::new(Snapshot {
                version: slot.version,
                hierarchy: slot.hierarchy.clone(),
                engine,
                engine_version: version,
            });
        }
        Ok(true)
    }

    /// Background task keeping engine staleness within the configured bound.
    pub fn spawn_refresher(&self) -> Option<tokio::task::JoinHandle<()>> {
        let secs = self.shared.config.refresh_secs;
        if secs == 0 {
            return None;
        }
        let state = self.clone();
        Some(tokio::spawn(async move {
            let bound = Duration::from_secs(secs);
            loop {
                let _ = tokio::time::timeout(bound, state.shared.refresh.notified()).await;
                if let Err(e) = state.refresh_now().await {
                    log::error!("index refresh failed: {e}");
                }
            }
        }))
    }

    /// Writes the live hierarchy as categories.jsonl / entities.jsonl.
    pub async fn write_snapshot(&self, dir: &Path) -> Result<(), ServiceError> {
        std::fs::create_dir_all(dir).map_err(|e| ServiceError::io(dir, e))?;
        let h = self.hierarchy().await;
        h.save(&dir.join("categories.jsonl"), &dir.join("entities.jsonl"))?;
        Ok(())
    }
}
