//! Append-only decision log and replay.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use catforge_core::files::read_jsonl;
use catforge_core::{CategoryHierarchy, CategoryId, EntityId};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Rejected,
    Edited(String),
}

/// What the editor was looking at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuggestionRef {
    #[serde(default)]
    pub case_id: String,
    pub label: String,
    pub parent_id: CategoryId,
    /// Member entities for the new category.
    #[serde(default)]
    pub entities: BTreeSet<EntityId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub seq: u64,
    pub suggestion: SuggestionRef,
    pub verdict: Verdict,
    pub timestamp: String,
    pub editor: String,
    /// Id assigned to the inserted category, for accepted or edited verdicts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_id: Option<CategoryId>,
}

impl DecisionRecord {
    /// The label that gets inserted, if any.
    pub fn inserted_label(&self) -> Option<&str> {
        match &self.verdict {
            Verdict::Accepted => Some(&self.suggestion.label),
            Verdict::Edited(label) => Some(label),
            Verdict::Rejected => None,
        }
    }
}

/// Applies one decision to a hierarchy; returns the new category id.
pub fn apply(h: &mut CategoryHierarchy, record: &DecisionRecord) -> catforge_core::Result<Option<CategoryId>> {
    match record.inserted_label() {
        Some(label) => h
            .insert_category(label, &record.suggestion.parent_id, &record.suggestion.entities)
            .map(Some),
        None => Ok(None),
    }
}

/// Rebuilds a hierarchy by applying every record in order.
pub fn replay(initial: &CategoryHierarchy, records: &[DecisionRecord]) -> Result<CategoryHierarchy, ServiceError> {
    let mut h = initial.clone();
    for r in records {
        let id = apply(&mut h, r).map_err(|e| ServiceError::Replay {
            seq: r.seq,
            message: e.to_string(),
        })?;
        if id != r.category_id {
            return Err(ServiceError::Replay {
                seq: r.seq,
                message: format!("replay assigned {:?}, log recorded {:?}", id, r.category_id),
            });
        }
    }
    Ok(h)
}

/// JSONL log, one fsynced line per decision.
#[derive(Debug)]
pub struct DecisionLog {
    path: PathBuf,
    file: File,
}

impl DecisionLog {
    /// Opens (creating if needed) the log and returns the records already in it.
    pub fn open(path: &Path) -> Result<(Self, Vec<DecisionRecord>), ServiceError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| ServiceError::io(dir, e))?;
        }
        let records = if path.exists() { read_jsonl(path)? } else { Vec::new() };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| ServiceError::io(path, e))?;
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
            },
            records,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &DecisionRecord) -> Result<(), ServiceError> {
        let mut line = serde_json::to_string(record).expect("serializable record");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.sync_data())
            .map_err(|e| ServiceError::io(&self.path, e))
    }
}

pub fn read_log(path: &Path) -> Result<Vec<DecisionRecord>, ServiceError> {
    Ok(read_jsonl(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use catforge_core::{CategoryRecord, EntityRecord};

    fn kb() -> CategoryHierarchy {
        CategoryHierarchy::from_records(
            [CategoryRecord {
                id: "p".into(),
                label: "Parent".into(),
                parent_ids: BTreeSet::new(),
                member_ids: BTreeSet::new(),
            }],
            [EntityRecord {
                id: "e1".into(),
                label: "One".into(),
                inlink_count: 0,
                outlink_count: 0,
            }],
        )
        .unwrap()
        .0
    }

    fn record(seq: u64, label: &str, verdict: Verdict, id: Option<&str>) -> DecisionRecord {
        DecisionRecord {
            seq,
            suggestion: SuggestionRef {
                case_id: "c".into(),
                label: label.into(),
                parent_id: "p".into(),
                entities: BTreeSet::from(["e1".to_string()]),
            },
            verdict,
            timestamp: "2024-01-01T00:00:00Z".into(),
            editor: "ed".into(),
            category_id: id.map(String::from),
        }
    }

    #[test]
    fn log_round_trip_and_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log").join("decisions.jsonl");
        let records = vec![
            record(1, "Child one", Verdict::Accepted, Some("Child_one")),
            record(2, "Noise", Verdict::Rejected, None),
            record(3, "Child two", Verdict::Edited("Child 2".into()), Some("Child_2")),
        ];
        {
            let (mut log, existing) = DecisionLog::open(&path).unwrap();
            assert!(existing.is_empty());
            for r in &records {
                log.append(r).unwrap();
            }
        }
        let (_, back) = DecisionLog::open(&path).unwrap();
        assert_eq!(back, records);
        let h = replay(&kb(), &back).unwrap();
        assert_eq!(h.children("p").len(), 2);
        assert!(h.category("Child_2").is_some());
    }

    #[test]
    fn replay_detects_divergence() {
        let bad = vec![record(1, "Child", Verdict::Accepted, Some("Other"))];
        assert!(matches!(replay(&kb(), &bad), Err(ServiceError::Replay { seq: 1, .. })));
        let dup = vec![
            record(1, "Child", Verdict::Accepted, Some("Child")),
            record(2, "child", Verdict::Accepted, Some("child")),
        ];
        assert!(replay(&kb(), &dup).is_err());
    }
}
