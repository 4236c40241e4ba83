//! Candidate ranking and parent placement.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::candidates::{Candidate, CandidatePool, CandidateSource};
use crate::context::KbContext;
use crate::error::{Error, Result};
use crate::features::{FeatureSchema, FeatureVector};
use crate::forest::{ForestParams, RandomForest};
use crate::index::{Hit, ScoredList};
use crate::kb::{CategoryHierarchy, CategoryId};
use crate::text::{segment_by_preposition, tokenize};
use crate::topic::{combined_score, expand_query, hierarchy_score, DEFAULT_ALPHA};

pub const DEFAULT_K_KEEP: usize = 10;
pub const DEFAULT_OUT_K: usize = 10;
pub const DEFAULT_POOL_K: usize = 10;
pub const DEFAULT_GAMMA: f64 = 0.1;

/// Anything that maps a feature vector to a relevance score.
pub trait Scorer {
    fn schema(&self) -> &FeatureSchema;
    fn score(&self, row: &FeatureVector) -> Result<f64>;
}

impl Scorer for RandomForest {
    fn schema(&self) -> &FeatureSchema {
        RandomForest::schema(self)
    }

    fn score(&self, row: &FeatureVector) -> Result<f64> {
        self.predict(row)
    }
}

/// Trains a regressor on binary labels.
pub fn train_model(
    schema: &FeatureSchema,
    rows: &[FeatureVector],
    labels: &[f64],
    params: &ForestParams,
) -> Result<RandomForest> {
    if labels.iter().any(|&l| l != 0.0 && l != 1.0) {
        return Err(Error::Training("labels must be 0 or 1".into()));
    }
    let positives = labels.iter().filter(|&&l| l == 1.0).count();
    if rows.len() < 2 || positives == 0 || positives == labels.len() {
        return Err(Error::Training(format!(
            "need both classes, got {positives} positive of {} examples",
            labels.len()
        )));
    }
    RandomForest::train(schema, rows, labels, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub candidate: Candidate,
    pub model_score: f64,
}

fn candidate_order(a: &RankedCandidate, b: &RankedCandidate) -> Ordering {
    b.model_score
        .total_cmp(&a.model_score)
        .then(b.candidate.generation_score.total_cmp(&a.candidate.generation_score))
        .then_with(|| a.candidate.label.cmp(&b.candidate.label))
}

pub fn initial_rank<M, F>(pool: &CandidatePool, model: &M, k_keep: usize, featurize: F) -> Result<Vec<RankedCandidate>>
where
    M: Scorer + ?Sized,
    F: Fn(&Candidate) -> Result<FeatureVector>,
{
    let mut ranked = pool
        .iter()
        .map(|c| {
            Ok(RankedCandidate {
                model_score: model.score(&featurize(c)?)?,
                candidate: c.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(candidate_order);
    ranked.truncate(k_keep);
    Ok(ranked)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParentScorer {
    Bm25,
    Hierarchy,
    Combined,
}

impl std::str::FromStr for ParentScorer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bm25" => Ok(Self::Bm25),
            "hierarchy" => Ok(Self::Hierarchy),
            "combined" => Ok(Self::Combined),
            other => Err(Error::Contract(format!(
                "unknown scorer `{other}` (expected bm25, hierarchy or combined)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentConfig {
    pub expansion: bool,
    pub scorer: ParentScorer,
    pub pool_k: usize,
    pub out_k: usize,
    pub alpha: f64,
}

impl Default for ParentConfig {
    fn default() -> Self {
        Self {
            expansion: true,
            scorer: ParentScorer::Combined,
            pool_k: DEFAULT_POOL_K,
            out_k: DEFAULT_OUT_K,
            alpha: DEFAULT_ALPHA,
        }
    }
}

/// BM25 retrieval of `pool_k` categories for the (optionally expanded)
/// label, reranked by the configured scorer and cut to `out_k`.
pub fn identify_parents(label: &str, cfg: &ParentConfig, ctx: &KbContext, exclude: Option<&str>) -> ScoredList {
    let segments = segment_by_preposition(label, &ctx.lexicon).content_terms();
    let query_terms: Vec<String> = if cfg.expansion {
        expand_query(&ctx.graph, &segments, cfg.alpha).terms()
    } else {
        segments.clone()
    };
    let query: Vec<String> = query_terms.iter().flat_map(|t| tokenize(t)).collect();
    let pool = ctx
        .indexes
        .category_label
        .search_filtered(&query, cfg.pool_k, |id| Some(id) != exclude);

    let mut hits: Vec<(usize, Hit)> = match cfg.scorer {
        ParentScorer::Bm25 => pool.hits.into_iter().enumerate().collect(),
        ParentScorer::Hierarchy | ParentScorer::Combined => {
            let rescored: Vec<(usize, Hit)> = pool
                .hits
                .iter()
                .enumerate()
                .map(|(i, h)| {
                    let parent_terms = ctx
                        .hierarchy
                        .category(&h.id)
                        .map(|c| segment_by_preposition(&c.label, &ctx.lexicon).content_terms())
                        .unwrap_or_default();
                    let phi = hierarchy_score(&ctx.graph, &segments, &parent_terms).unwrap_or(0.0);
                    let score = match cfg.scorer {
                        ParentScorer::Hierarchy => phi,
                        _ => combined_score(h.score, phi),
                    };
                    (
                        i,
                        Hit {
                            id: h.id.clone(),
                            score,
                        },
                    )
                })
                .collect();
            if cfg.scorer == ParentScorer::Combined && rescored.iter().all(|(_, h)| h.score == 0.0) {
                pool.hits.into_iter().enumerate().collect()
            } else {
                rescored
            }
        }
    };
    hits.sort_by(|a, b| b.1.score.total_cmp(&a.1.score).then(a.0.cmp(&b.0)));
    hits.truncate(cfg.out_k);
    ScoredList {
        hits: hits.into_iter().map(|(_, h)| h).collect(),
        k: cfg.out_k,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentScore {
    pub id: CategoryId,
    pub psi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub label: String,
    pub source: CandidateSource,
    pub parent_id: CategoryId,
    pub parent_label: String,
    /// max ψ over the candidate's parents.
    pub score: f64,
    /// Every scored parent, best first.
    pub parents: Vec<ParentScore>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedSuggestions {
    pub suggestions: Vec<Suggestion>,
    pub gamma: f64,
    pub notes: Vec<String>,
}

/// Scores each (candidate, parent) pair, keeps the best parent per candidate
/// and drops candidates scoring below `gamma`.
pub fn final_rank<M, F>(
    candidates: &[RankedCandidate],
    parents: &[ScoredList],
    model: &M,
    gamma: f64,
    hierarchy: &CategoryHierarchy,
    featurize: F,
) -> Result<RankedSuggestions>
where
    M: Scorer + ?Sized,
    F: Fn(&Candidate, &str) -> Result<FeatureVector>,
{
    if candidates.len() != parents.len() {
        return Err(Error::Contract(format!(
            "{} candidates but {} parent lists",
            candidates.len(),
            parents.len()
        )));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Contract(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    let members = |id: &str| hierarchy.category(id).map_or(0, |c| c.member_ids.len());
    let label_of = |id: &str| hierarchy.category(id).map(|c| c.label.clone());

    let mut out = RankedSuggestions {
        gamma,
        ..Default::default()
    };
    // Deduplicate parents per candidate so permuted inputs score identically.
    for (rc, plist) in candidates.iter().zip(parents) {
        let c = &rc.candidate;
        let ids: BTreeMap<&str, ()> = plist
            .ids()
            .filter(|id| hierarchy.contains_category(id))
            .map(|id| (id, ()))
            .collect();
        if ids.is_empty() {
            out.notes.push(format!("no parent identified for \"{}\"", c.label));
            continue;
        }
        let mut scored = ids
            .keys()
            .map(|&id| {
                Ok(ParentScore {
                    id: id.to_string(),
                    psi: model.score(&featurize(c, id)?)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(|a, b| {
            b.psi
                .total_cmp(&a.psi)
                .then(members(&b.id).cmp(&members(&a.id)))
                .then_with(|| label_of(&a.id).cmp(&label_of(&b.id)))
                .then_with(|| a.id.cmp(&b.id))
        });
        let best = &scored[0];
        if best.psi < gamma {
            continue;
        }
        out.suggestions.push(Suggestion {
            label: c.label.clone(),
            source: c.source.clone(),
            parent_id: best.id.clone(),
            parent_label: label_of(&best.id).unwrap_or_default(),
            score: best.psi,
            parents: scored,
        });
    }
    out.suggestions.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.label.cmp(&b.label))
            .then_with(|| a.parent_id.cmp(&b.parent_id))
    });
    Ok(out)
}
