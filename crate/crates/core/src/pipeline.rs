//! The end-to-end suggestion engine: candidate generation, initial ranking,
//! parent identification and final ranking over one knowledge-base context.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::{generate_extractive, pool_merge, Candidate, CandidatePool, DEFAULT_CANDIDATES};
use crate::context::KbContext;
use crate::dataset::{EndToEndCase, RankingExample};
use crate::error::{Error, Result};
use crate::features::{BlockSet, FeatureExtractor, FeatureInput, FeatureSchema, FeatureVector, DEFAULT_TOP_K};
use crate::forest::{ForestParams, RandomForest};
use crate::index::ScoredList;
use crate::kb::{EntityId, EntitySetInput};
use crate::metrics::{EvalCase, EvalRun};
use crate::ranking::{
    final_rank, identify_parents, initial_rank, train_model, ParentConfig, ParentScorer, RankedSuggestions,
    DEFAULT_GAMMA, DEFAULT_K_KEEP, DEFAULT_OUT_K, DEFAULT_POOL_K,
};
use crate::text::label_key;
use crate::topic::DEFAULT_ALPHA;

pub const INITIAL_MODEL_FILE: &str = "initial.cfrf";
pub const FINAL_MODEL_FILE: &str = "final.cfrf";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineParams {
    pub alpha: f64,
    pub gamma: f64,
    pub k: usize,
    pub pool_k: usize,
    pub out_k: usize,
    pub k_keep: usize,
    pub candidates: usize,
    pub expansion: bool,
    pub scorer: ParentScorer,
    pub seed: u64,
    pub n_trees: usize,
    pub max_features: usize,
    /// Drop candidates whose label already names a category.
    pub suppress_existing: bool,
}

impl Default for EngineParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            gamma: DEFAULT_GAMMA,
            k: DEFAULT_TOP_K,
            pool_k: DEFAULT_POOL_K,
            out_k: DEFAULT_OUT_K,
            k_keep: DEFAULT_K_KEEP,
            candidates: DEFAULT_CANDIDATES,
            expansion: true,
            scorer: ParentScorer::Combined,
            seed: 42,
            n_trees: 1000,
            max_features: 10,
            suppress_existing: true,
        }
    }
}

impl EngineParams {
    pub fn parent_config(&self) -> ParentConfig {
        ParentConfig {
            expansion: self.expansion,
            scorer: self.scorer,
            pool_k: self.pool_k,
            out_k: self.out_k,
            alpha: self.alpha,
        }
    }

    pub fn forest(&self) -> ForestParams {
        ForestParams {
            n_trees: self.n_trees,
            max_features: self.max_features,
            seed: self.seed,
            ..ForestParams::default()
        }
    }

    pub fn initial_schema(&self) -> FeatureSchema {
        FeatureSchema::new(BlockSet::I_II, self.k)
    }

    pub fn final_schema(&self) -> FeatureSchema {
        FeatureSchema::new(BlockSet::ALL, self.k)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Contract(m.to_string()));
        if self.alpha < 1.0 {
            return bad("alpha must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.k == 0 || self.pool_k == 0 || self.out_k == 0 || self.k_keep == 0 || self.candidates == 0 {
            return bad("k, pool_k, out_k, k_keep and candidates must be positive");
        }
        Ok(())
    }
}

/// Entity ids of an input that exist in the knowledge base.
pub fn known_members(ctx: &KbContext, input: &EntitySetInput) -> BTreeSet<EntityId> {
    input
        .entity_ids
        .iter()
        .filter(|e| ctx.hierarchy.entity(e).is_some())
        .cloned()
        .collect()
}

/// Merged, deduplicated candidates for one input.
pub fn candidate_pool(ctx: &KbContext, params: &EngineParams, input: &EntitySetInput, imported: &[Candidate]) -> CandidatePool {
    let extractive = generate_extractive(input, ctx, params.candidates);
    let mut pool = pool_merge([extractive.as_slice(), imported]);
    if params.suppress_existing {
        pool.candidates.retain(|c| !ctx.category_keys.contains(&label_key(&c.label)));
    }
    pool
}

fn initial_features(
    fx: &FeatureExtractor<'_>,
    schema: &FeatureSchema,
    label: &str,
    members: &BTreeSet<EntityId>,
    exclude: Option<&str>,
) -> Result<FeatureVector> {
    fx.assemble(
        schema,
        &FeatureInput {
            label,
            members,
            parent: None,
            exclude,
        },
    )
}

fn final_features(
    fx: &FeatureExtractor<'_>,
    schema: &FeatureSchema,
    label: &str,
    parent: &str,
    members: &BTreeSet<EntityId>,
    exclude: Option<&str>,
) -> Result<FeatureVector> {
    fx.assemble(
        schema,
        &FeatureInput {
            label,
            members,
            parent: Some(parent),
            exclude,
        },
    )
}

/// Feature rows and binary targets for both models.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub initial_rows: Vec<FeatureVector>,
    pub initial_targets: Vec<f64>,
    pub final_rows: Vec<FeatureVector>,
    pub final_targets: Vec<f64>,
}

impl TrainingSet {
    pub fn extend(&mut self, other: TrainingSet) {
        self.initial_rows.extend(other.initial_rows);
        self.initial_targets.extend(other.initial_targets);
        self.final_rows.extend(other.final_rows);
        self.final_targets.extend(other.final_targets);
    }
}

/// Training rows from labelled cases. A candidate is positive when its label
/// matches a ground-truth label; a (candidate, parent) pair is positive when
/// the candidate is and the parent is one of that category's parents.
pub fn training_from_cases(ctx: &KbContext, params: &EngineParams, cases: &[EndToEndCase]) -> Result<TrainingSet> {
    let fx = FeatureExtractor::new(ctx, params.k);
    let (s1, s2) = (params.initial_schema(), params.final_schema());
    let pcfg = params.parent_config();
    let parts = cases
        .par_iter()
        .map(|case| {
            let mut set = TrainingSet::default();
            let members = known_members(ctx, &case.input);
            let truth: BTreeMap<String, BTreeSet<String>> = case
                .ground_truth_labels
                .iter()
                .map(|(id, l)| (label_key(l), case.ground_truth_parents.get(id).cloned().unwrap_or_default()))
                .collect();
            let pool = candidate_pool(ctx, params, &case.input, &[]);
            for c in pool.iter() {
                let key = label_key(&c.label);
                let true_parents = truth.get(&key);
                set.initial_rows.push(initial_features(&fx, &s1, &c.label, &members, None)?);
                set.initial_targets.push(true_parents.is_some() as u8 as f64);
                let parents = identify_parents(&c.label, &pcfg, ctx, None);
                for p in parents.ids() {
                    let positive = true_parents.is_some_and(|tp| tp.contains(p));
                    set.final_rows.push(final_features(&fx, &s2, &c.label, p, &members, None)?);
                    set.final_targets.push(positive as u8 as f64);
                }
            }
            Ok(set)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = TrainingSet::default();
    for p in parts {
        out.extend(p);
    }
    Ok(out)
}

/// Training rows from snapshot-mined categories, featurized with the
/// category itself left out of every statistic.
pub fn training_from_ranking_examples(
    ctx: &KbContext,
    params: &EngineParams,
    examples: &[RankingExample],
) -> Result<TrainingSet> {
    let fx = FeatureExtractor::new(ctx, params.k);
    let (s1, s2) = (params.initial_schema(), params.final_schema());
    let rows = examples
        .par_iter()
        .map(|ex| {
            let cat = ctx.hierarchy.category(&ex.category_id).ok_or_else(|| Error::NotFound {
                kind: "category",
                id: ex.category_id.clone(),
            })?;
            let exclude = Some(ex.category_id.as_str());
            Ok((
                initial_features(&fx, &s1, &ex.label, &cat.member_ids, exclude)?,
                final_features(&fx, &s2, &ex.label, &ex.parent_id, &cat.member_ids, exclude)?,
                ex.target,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = TrainingSet::default();
    for (a, b, t) in rows {
        out.initial_rows.push(a);
        out.initial_targets.push(t);
        out.final_rows.push(b);
        out.final_targets.push(t);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Models {
    pub initial: RandomForest,
    pub final_: RandomForest,
}

impl Models {
    pub fn train(params: &EngineParams, set: &TrainingSet) -> Result<Self> {
        let forest = params.forest();
        Ok(Self {
            initial: train_model(&params.initial_schema(), &set.initial_rows, &set.initial_targets, &forest)?,
            final_: train_model(&params.final_schema(), &set.final_rows, &set.final_targets, &forest)?,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.initial.save(&dir.join(INITIAL_MODEL_FILE))?;
        self.final_.save(&dir.join(FINAL_MODEL_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            initial: RandomForest::load(&dir.join(INITIAL_MODEL_FILE))?,
            final_: RandomForest::load(&dir.join(FINAL_MODEL_FILE))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSuggestions {
    pub case_id: String,
    #[serde(flatten)]
    pub ranked: RankedSuggestions,
}

/// One flat line of suggestions.jsonl.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionLine {
    pub case_id: String,
    pub rank: usize,
    pub label: String,
    pub parent_id: String,
    pub parent_label: String,
    pub score: f64,
}

impl CaseSuggestions {
    pub fn lines(&self) -> Vec<SuggestionLine> {
        self.ranked
            .suggestions
            .iter()
            .enumerate()
            .map(|(i, s)| SuggestionLine {
                case_id: self.case_id.clone(),
                rank: i + 1,
                label: s.label.clone(),
                parent_id: s.parent_id.clone(),
                parent_label: s.parent_label.clone(),
                score: s.score,
            })
            .collect()
    }
}

#[derive(Clone)]
pub struct Engine {
    pub ctx: Arc<KbContext>,
    pub params: EngineParams,
    pub models: Arc<Models>,
}

impl Engine {
    pub fn new(ctx: Arc<KbContext>, params: EngineParams, models: Arc<Models>) -> Result<Self> {
        params.validate()?;
        if models.initial.schema() != &params.initial_schema() || models.final_.schema() != &params.final_schema() {
            return Err(Error::Contract(format!(
                "models were trained for a different feature schema than k = {}",
                params.k
            )));
        }
        Ok(Self { ctx, params, models })
    }

    /// Same models and parameters over a different context.
    pub fn with_context(&self, ctx: Arc<KbContext>) -> Self {
        Self {
            ctx,
            params: self.params.clone(),
            models: self.models.clone(),
        }
    }

    pub fn suggest(&self, input: &EntitySetInput, imported: &[Candidate]) -> Result<CaseSuggestions> {
        let ctx = &*self.ctx;
        let fx = FeatureExtractor::new(ctx, self.params.k);
        let members = known_members(ctx, input);
        let pool = candidate_pool(ctx, &self.params, input, imported);
        let (s1, s2) = (self.params.initial_schema(), self.params.final_schema());
        let kept = initial_rank(&pool, &self.models.initial, self.params.k_keep, |c| {
            initial_features(&fx, &s1, &c.label, &members, None)
        })?;
        let pcfg = self.params.parent_config();
        let parents: Vec<ScoredList> = kept
            .iter()
            .map(|rc| identify_parents(&rc.candidate.label, &pcfg, ctx, None))
            .collect();
        let ranked = final_rank(&kept, &parents, &self.models.final_, self.params.gamma, &ctx.hierarchy, |c, p| {
            final_features(&fx, &s2, &c.label, p, &members, None)
        })?;
        Ok(CaseSuggestions {
            case_id: input.case_id.clone(),
            ranked,
        })
    }

    pub fn suggest_all(&self, inputs: &[EntitySetInput], imported: &BTreeMap<String, Vec<Candidate>>) -> Result<Vec<CaseSuggestions>> {
        inputs
            .par_iter()
            .map(|i| {
                let extra = imported.get(&i.case_id).map(Vec::as_slice).unwrap_or(&[]);
                self.suggest(i, extra)
            })
            .collect()
    }
}

/// Label-match evaluation run plus parent placement statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementStats {
    /// Suggestions whose label matches a ground-truth category.
    pub recovered: usize,
    /// Of those, how many list a true parent among their scored parents.
    pub parent_hits: usize,
}

impl PlacementStats {
    pub fn rate(&self) -> f64 {
        if self.recovered == 0 {
            0.0
        } else {
            self.parent_hits as f64 / self.recovered as f64
        }
    }
}

pub fn evaluate(system: &str, cases: &[EndToEndCase], suggestions: &[CaseSuggestions]) -> Result<(EvalRun, PlacementStats)> {
    let by_case: BTreeMap<&str, &CaseSuggestions> = suggestions.iter().map(|s| (s.case_id.as_str(), s)).collect();
    let mut stats = PlacementStats {
        recovered: 0,
        parent_hits: 0,
    };
    let mut eval_cases = Vec::with_capacity(cases.len());
    for case in cases {
        let relevant = case.relevant_keys();
        let ranking: Vec<String> = match by_case.get(case.input.case_id.as_str()) {
            Some(s) => s.ranked.suggestions.iter().map(|s| label_key(&s.label)).collect(),
            None => Vec::new(),
        };
        if let Some(s) = by_case.get(case.input.case_id.as_str()) {
            for sug in &s.ranked.suggestions {
                let key = label_key(&sug.label);
                let Some((gt_id, _)) = case.ground_truth_labels.iter().find(|(_, l)| label_key(l) == key) else {
                    continue;
                };
                stats.recovered += 1;
                let truth = case.ground_truth_parents.get(gt_id).cloned().unwrap_or_default();
                if sug.parents.iter().any(|p| truth.contains(&p.id)) {
                    stats.parent_hits += 1;
                }
            }
        }
        eval_cases.push(EvalCase {
            case_id: case.input.case_id.clone(),
            ranking,
            relevant,
        });
    }
    Ok((
        EvalRun {
            system: system.to_string(),
            cases: eval_cases,
        },
        stats,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_end_to_end, EndToEndConfig};
    use crate::synth::{generate, SynthConfig};
    use crate::text::Lexicon;

    fn small_params() -> EngineParams {
        EngineParams {
            n_trees: 30,
            ..Default::default()
        }
    }

    #[test]
    fn params_validation() {
        assert!(EngineParams::default().validate().is_ok());
        assert!(EngineParams { alpha: 0.5, ..Default::default() }.validate().is_err());
        assert!(EngineParams { gamma: 1.5, ..Default::default() }.validate().is_err());
        assert!(EngineParams { k: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn synthetic_round_trip() {
        let kb = generate(&SynthConfig::default()).unwrap();
        let data = build_end_to_end(&kb.hierarchy, &kb.inputs, &EndToEndConfig::default()).unwrap();
        assert_eq!(data.cases.len(), kb.inputs.len());
        let ctx = Arc::new(KbContext::build(Arc::new(data.working.clone()), Lexicon::default(), &Default::default()));
        let params = small_params();
        let train: Vec<EndToEndCase> = data.select(&kb.train_ids).take(10).cloned().collect();
        let set = training_from_cases(&ctx, &params, &train).unwrap();
        assert!(set.initial_targets.contains(&1.0));
        assert!(set.final_targets.contains(&1.0));
        let models = Arc::new(Models::train(&params, &set).unwrap());
        let engine = Engine::new(ctx.clone(), params.clone(), models.clone()).unwrap();

        let test: Vec<EndToEndCase> = data.select(&kb.test_ids).take(5).cloned().collect();
        let inputs: Vec<EntitySetInput> = test.iter().map(|c| c.input.clone()).collect();
        let out = engine.suggest_all(&inputs, &BTreeMap::new()).unwrap();
        for s in &out {
            for sug in &s.ranked.suggestions {
                assert!(ctx.hierarchy.contains_category(&sug.parent_id));
                assert!(sug.score >= params.gamma);
                assert!(ctx.hierarchy.category(&label_key(&sug.label)).is_none());
            }
            assert!(s.ranked.suggestions.windows(2).all(|w| w[0].score >= w[1].score));
        }
        assert_eq!(out, engine.suggest_all(&inputs, &BTreeMap::new()).unwrap());
        let (run, _) = evaluate("test", &test, &out).unwrap();
        assert_eq!(run.cases.len(), 5);

        let dir = tempfile::tempdir().unwrap();
        models.save(dir.path()).unwrap();
        let loaded = Arc::new(Models::load(dir.path()).unwrap());
        let again = Engine::new(ctx, params, loaded).unwrap().suggest_all(&inputs, &BTreeMap::new()).unwrap();
        assert_eq!(out, again);

        assert!(Engine::new(engine.ctx.clone(), EngineParams { k: 3, ..small_params() }, models).is_err());
    }
}
