//! Test collections: end-to-end cases, snapshot-mined ranking examples and
//! parent-identification examples.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kb::{CategoryHierarchy, CategoryId, CategoryRecord, EntitySetInput};
use crate::text::{label_key, normalize_label};

pub const DEFAULT_MIN_ENTITIES: usize = 5;
pub const RENAME_MAX_EDIT_RATIO: f64 = 0.4;
pub const RENAME_MIN_JACCARD: f64 = 0.6;

const GENERAL_EXCLUSIONS: &str = include_str!("../data/general_exclusions.txt");

/// Parses an exclusion list: one label per line, `#` starts a comment.
pub fn parse_exclusions(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(normalize_label)
        .collect()
}

pub fn default_exclusions() -> BTreeSet<String> {
    parse_exclusions(GENERAL_EXCLUSIONS)
}

pub fn load_exclusions(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_exclusions(&text))
}

/// Ids of the categories whose normalized label is in `labels`.
pub fn excluded_ids(h: &CategoryHierarchy, labels: &BTreeSet<String>) -> BTreeSet<CategoryId> {
    h.categories()
        .filter(|c| labels.contains(&normalize_label(&c.label)))
        .map(|c| c.id.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndToEndCase {
    #[serde(flatten)]
    pub input: EntitySetInput,
    pub ground_truth: BTreeSet<CategoryId>,
    pub ground_truth_labels: BTreeMap<CategoryId, String>,
    /// Parents of each ground-truth category that survive in the working
    /// hierarchy.
    pub ground_truth_parents: BTreeMap<CategoryId, BTreeSet<CategoryId>>,
}

impl EndToEndCase {
    /// Relevance keys for label matching.
    pub fn relevant_keys(&self) -> BTreeSet<String> {
        self.ground_truth_labels.values().map(|l| label_key(l)).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BuildReport {
    pub too_few_entities: usize,
    pub no_ground_truth: usize,
    pub duplicate_ground_truth: usize,
    pub dropped_entities: usize,
}

#[derive(Debug, Clone)]
pub struct EndToEndDataset {
    pub working: CategoryHierarchy,
    pub cases: Vec<EndToEndCase>,
    pub split: Split,
    pub report: BuildReport,
}

impl EndToEndDataset {
    pub fn case(&self, id: &str) -> Option<&EndToEndCase> {
        self.cases.iter().find(|c| c.input.case_id == id)
    }

    pub fn select<'a>(&'a self, ids: &'a [String]) -> impl Iterator<Item = &'a EndToEndCase> + 'a {
        ids.iter().filter_map(|id| self.case(id))
    }
}

#[derive(Debug, Clone)]
pub struct EndToEndConfig {
    pub min_entities: usize,
    pub exclusions: BTreeSet<String>,
    pub seed: u64,
}

impl Default for EndToEndConfig {
    fn default() -> Self {
        Self {
            min_entities: DEFAULT_MIN_ENTITIES,
            exclusions: default_exclusions(),
            seed: 42,
        }
    }
}

/// Ground truth for one input: page categories holding more than half of
/// the entities, minus trivial and excluded ones.
pub fn ground_truth(
    h: &CategoryHierarchy,
    input: &EntitySetInput,
    exclusions: &BTreeSet<String>,
) -> BTreeSet<CategoryId> {
    let entities: BTreeSet<&String> = input.entity_ids.iter().collect();
    let title = label_key(&input.page_title);
    input
        .page_categories
        .iter()
        .filter_map(|id| h.category(id))
        .filter(|c| {
            let inside = entities.iter().filter(|e| c.member_ids.contains(**e)).count();
            2 * inside > entities.len()
                && label_key(&c.label) != title
                && !exclusions.contains(&normalize_label(&c.label))
        })
        .map(|c| c.id.clone())
        .collect()
}

fn split_key(seed: u64, case_id: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(case_id.as_bytes());
    hasher.finalize().into()
}

/// Seeded 80/10/10 split by a stable hash of each case id.
pub fn split_cases(ids: &[String], seed: u64) -> Split {
    let mut keyed: Vec<([u8; 32], &String)> = ids.iter().map(|id| (split_key(seed, id), id)).collect();
    keyed.sort();
    let n = ids.len();
    let n_train = (0.8 * n as f64).round() as usize;
    let n_val = ((0.1 * n as f64).round() as usize).min(n - n_train);
    let mut it = keyed.into_iter().map(|(_, id)| id.clone());
    Split {
        train: it.by_ref().take(n_train).collect(),
        val: it.by_ref().take(n_val).collect(),
        test: it.collect(),
    }
}

pub fn build_end_to_end(h: &CategoryHierarchy, inputs: &[EntitySetInput], cfg: &EndToEndConfig) -> Result<EndToEndDataset> {
    let mut report = BuildReport::default();
    let mut seen: BTreeSet<BTreeSet<CategoryId>> = BTreeSet::new();
    let mut cases = Vec::new();
    for raw in inputs {
        let mut input = raw.clone();
        let before = input.entity_ids.len();
        let mut dedup = BTreeSet::new();
        input.entity_ids.retain(|e| h.entity(e).is_some() && dedup.insert(e.clone()));
        report.dropped_entities += before - input.entity_ids.len();
        if input.entity_ids.len() < cfg.min_entities {
            report.too_few_entities += 1;
            continue;
        }
        let gt = ground_truth(h, &input, &cfg.exclusions);
        if gt.is_empty() {
            report.no_ground_truth += 1;
            continue;
        }
        if !seen.insert(gt.clone()) {
            report.duplicate_ground_truth += 1;
            continue;
        }
        cases.push((input, gt));
    }

    let mut working = h.clone();
    for (_, gt) in &cases {
        for id in gt {
            if working.contains_category(id) {
                working.remove_subtree(id)?;
            }
        }
    }

    let cases: Vec<EndToEndCase> = cases
        .into_iter()
        .map(|(mut input, gt)| {
            input.page_categories.retain(|c| working.contains_category(c));
            let ground_truth_labels = gt
                .iter()
                .map(|id| (id.clone(), h.category(id).expect("ground truth exists").label.clone()))
                .collect();
            let ground_truth_parents = gt
                .iter()
                .map(|id| {
                    let parents = h.category(id).expect("ground truth exists").parent_ids.iter();
                    (id.clone(), parents.filter(|p| working.contains_category(p)).cloned().collect())
                })
                .collect();
            EndToEndCase {
                input,
                ground_truth: gt,
                ground_truth_labels,
                ground_truth_parents,
            }
        })
        .collect();

    let ids: Vec<String> = cases.iter().map(|c| c.input.case_id.clone()).collect();
    let split = split_cases(&ids, cfg.seed);
    Ok(EndToEndDataset {
        working,
        cases,
        split,
        report,
    })
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

/// Whether `b` looks like a renamed `a`: close labels and mostly shared
/// members.
pub fn is_rename(a: &CategoryRecord, b: &CategoryRecord) -> bool {
    let (la, lb) = (normalize_label(&a.label), normalize_label(&b.label));
    let longest = la.chars().count().max(lb.chars().count());
    let distance = strsim::levenshtein(&la, &lb);
    distance as f64 <= RENAME_MAX_EDIT_RATIO * longest as f64 && jaccard(&a.member_ids, &b.member_ids) >= RENAME_MIN_JACCARD
}

#[derive(Debug, Clone)]
pub struct SnapshotTriple {
    pub tags: [String; 3],
    pub snapshots: [CategoryHierarchy; 3],
}

impl SnapshotTriple {
    /// Tags must be strictly increasing.
    pub fn new(tags: [String; 3], snapshots: [CategoryHierarchy; 3]) -> Result<Self> {
        if !(tags[0] < tags[1] && tags[1] < tags[2]) {
            return Err(Error::Contract(format!(
                "snapshot tags must be strictly ordered, got {tags:?}"
            )));
        }
        Ok(Self { tags, snapshots })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingExample {
    pub label: String,
    pub category_id: CategoryId,
    pub parent_id: CategoryId,
    pub target: f64,
}

fn label_index(h: &CategoryHierarchy) -> BTreeSet<String> {
    h.categories().map(|c| normalize_label(&c.label)).collect()
}

fn renamed_in(a: &CategoryRecord, h: &CategoryHierarchy) -> bool {
    let candidates: BTreeSet<&CategoryId> = a.member_ids.iter().flat_map(|m| h.categories_of(m)).collect();
    candidates
        .into_iter()
        .filter_map(|id| h.category(id))
        .any(|b| is_rename(a, b))
}

/// The two classes before sampling: (positives, negatives), as T1 ids.
pub fn classify_snapshots(snap: &SnapshotTriple) -> (Vec<CategoryId>, Vec<CategoryId>) {
    let [t1, t2, t3] = &snap.snapshots;
    let (in2, in3) = (label_index(t2), label_index(t3));
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for c in t1.categories() {
        let key = normalize_label(&c.label);
        match (in2.contains(&key), in3.contains(&key)) {
            (true, true) => pos.push(c.id.clone()),
            (false, false) if !renamed_in(c, t2) && !renamed_in(c, t3) => neg.push(c.id.clone()),
            _ => {}
        }
    }
    (pos, neg)
}

/// Samples `n_pos` long-lived and `n_neg` deleted categories from T1, each
/// paired with its largest T1 parent. Categories without parents are skipped.
/// A count of 0 takes every available category of that class.
pub fn build_category_ranking_dataset(
    snap: &SnapshotTriple,
    n_pos: usize,
    n_neg: usize,
    seed: u64,
) -> Result<Vec<RankingExample>> {
    let t1 = &snap.snapshots[0];
    let (pos, neg) = classify_snapshots(snap);
    let with_parent = |ids: Vec<CategoryId>| -> Result<Vec<(CategoryId, CategoryId)>> {
        let mut out = Vec::new();
        for id in ids {
            if let Some(p) = t1.largest_parent(&id)? {
                out.push((id, p.id.clone()));
            }
        }
        Ok(out)
    };
    let (mut pos, mut neg) = (with_parent(pos)?, with_parent(neg)?);
    let n_pos = if n_pos == 0 { pos.len() } else { n_pos };
    let n_neg = if n_neg == 0 { neg.len() } else { n_neg };
    if pos.len() < n_pos || neg.len() < n_neg {
        return Err(Error::Insufficient(format!(
            "requested {n_pos} positive and {n_neg} negative categories, \
             available {} positive and {} negative",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let example = |(id, parent): (CategoryId, CategoryId), target: f64| RankingExample {
        label: t1.category(&id).expect("T1 category").label.clone(),
        category_id: id,
        parent_id: parent,
        target,
    };
    let mut out: Vec<RankingExample> = pos.into_iter().take(n_pos).map(|p| example(p, 1.0)).collect();
    out.extend(neg.into_iter().take(n_neg).map(|n| example(n, 0.0)));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParentIdExample {
    pub category_id: CategoryId,
    pub label: String,
    pub parents: BTreeSet<CategoryId>,
}

/// Seeded sample of `n` leaf categories (with at least one parent) and
/// their full parent sets.
pub fn build_parent_id_dataset(h: &CategoryHierarchy, n: usize, seed: u64) -> Result<Vec<ParentIdExample>> {
    let mut leaves: Vec<&CategoryRecord> = h
        .categories()
        .filter(|c| h.is_leaf(&c.id) && !c.parent_ids.is_empty())
        .collect();
    if leaves.len() < n || leaves.is_empty() {
        return Err(Error::Insufficient(format!(
            "requested {n} leaf categories with parents, available {}",
            leaves.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    leaves.shuffle(&mut rng);
    Ok(leaves
        .into_iter()
        .take(n)
        .map(|c| ParentIdExample {
            category_id: c.id.clone(),
            label: c.label.clone(),
            parents: c.parent_ids.clone(),
        })
        .collect())
}

pub fn write_ranking_csv(path: &Path, rows: &[RankingExample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ranking_csv(path: &Path) -> Result<Vec<RankingExample>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}
