//! Random forest regression (CART, squared error) with bootstrap sampling
//! and per-split feature subsampling.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSchema, FeatureVector};
use crate::files::{read_binary, write_binary};

pub const MODEL_MAGIC: &[u8; 5] = b"CFRF1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_features: usize,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 1000,
            max_features: 10,
            min_samples_leaf: 1,
            max_depth: None,
            bootstrap: true,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[feature as usize] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    params: &'a ForestParams,
    n_features: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    importance: Vec<f64>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    position: usize,
    gain: f64,
}

impl Builder<'_> {
    fn mean(&self, idx: &[usize]) -> f64 {
        idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64
    }

    fn sse(&self, idx: &[usize]) -> f64 {
        let m = self.mean(idx);
        idx.iter().map(|&i| (self.y[i] - m).powi(2)).sum()
    }

    /// Examines shuffled features until `max_features` non-constant ones
    /// have been visited.
    fn best_split(&mut self, idx: &mut [usize]) -> Option<BestSplit> {
        let n = idx.len();
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let parent_sse = self.sse(idx);
        let mut order: Vec<usize> = (0..self.n_features).collect();
        order.shuffle(&mut self.rng);

        let min_leaf = self.params.min_samples_leaf.max(1);
        let mut visited = 0usize;
        let mut best: Option<BestSplit> = None;
        for f in order {
            if visited >= self.params.max_features {
                break;
            }
            idx.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let lo = self.x[idx[0]][f];
            let hi = self.x[idx[n - 1]][f];
            if lo == hi {
                continue;
            }
            visited += 1;

            let mut left_sum = 0.0;
            for pos in 1..n {
                left_sum += self.y[idx[pos - 1]];
                let (a, b) = (self.x[idx[pos - 1]][f], self.x[idx[pos]][f]);
                if a == b || pos < min_leaf || n - pos < min_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                // Maximizing this proxy minimizes the children's summed SSE.
                let proxy = left_sum * left_sum / pos as f64 + right_sum * right_sum / (n - pos) as f64;
                if best.as_ref().is_none_or(|b| proxy > b.gain) {
                    let mut threshold = a + (b - a) / 2.0;
                    if threshold >= b || !threshold.is_finite() {
                        threshold = a;
                    }
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        position: pos,
                        gain: proxy,
                    });
                }
            }
        }
        let mut best = best?;
        let child_sse = {
            idx.sort_by(|&a, &b| self.x[a][best.feature].total_cmp(&self.x[b][best.feature]));
            self.sse(&idx[..best.position]) + self.sse(&idx[best.position..])
        };
        best.gain = parent_sse - child_sse;
        (best.gain > 1e-12).then_some(best)
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize) -> u32 {
        let id = self.nodes.len() as u32;
        let value = self.mean(idx);
        self.nodes.push(Node::Leaf(value));
        let too_deep = self.params.max_depth.is_some_and(|d| depth >= d);
        if idx.len() < 2 * self.params.min_samples_leaf.max(1) || too_deep {
            return id;
        }
        let Some(split) = self.best_split(idx) else {
            return id;
        };
        self.importance[split.feature] += split.gain;
        let (l, r) = idx.split_at_mut(split.position);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id as usize] = Node::Split {
            feature: split.feature as u32,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    schema: FeatureSchema,
    schema_hash: u64,
    params: ForestParams,
    trees: Vec<Tree>,
    oob_mse: Option<f64>,
    importances: Vec<f64>,
}

impl RandomForest {
    pub fn train(
        schema: &FeatureSchema,
        rows: &[FeatureVector],
        targets: &[f64],
        params: &ForestParams,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Training("no training rows".into()));
        }
        if rows.len() != targets.len() {
            return Err(Error::Training(format!(
                "{} rows but {} targets",
                rows.len(),
                targets.len()
            )));
        }
        if params.n_trees == 0 || params.max_features == 0 {
            return Err(Error::Training("n_trees and max_features must be positive".into()));
        }
        let hash = schema.hash();
        if let Some(bad) = rows.iter().position(|r| r.schema_hash != hash || r.len() != schema.len()) {
            return Err(Error::Contract(format!("training row {bad} does not match the model schema")));
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::Training("non-finite target".into()));
        }

        let x: Vec<Vec<f64>> = rows.iter().map(|r| r.values.clone()).collect();
        let n = x.len();
        let n_features = schema.len();
        let grown: Vec<(Tree, Vec<f64>, Vec<bool>)> = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(t as u64));
                let mut in_bag = vec![false; n];
                let mut idx: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                for &i in &idx {
                    in_bag[i] = true;
                }
                let mut b = Builder {
                    x: &x,
                    y: targets,
                    params,
                    n_features,
                    rng,
                    nodes: Vec::new(),
                    importance: vec![0.0; n_features],
                };
                b.grow(&mut idx, 0);
                (Tree { nodes: b.nodes }, b.importance, in_bag)
            })
            .collect();

        let mut importances = vec![0.0; n_features];
        let mut oob_sum = vec![0.0; n];
        let mut oob_n = vec![0usize; n];
        for (tree, imp, in_bag) in &grown {
            for (a, b) in importances.iter_mut().zip(imp) {
                *a += b;
            }
            for i in (0..n).filter(|&i| !in_bag[i]) {
                oob_sum[i] += tree.predict(&x[i]);
                oob_n[i] += 1;
            }
        }
        let total: f64 = importances.iter().sum();
        if total > 0.0 {
            importances.iter_mut().for_each(|v| *v /= total);
        }
        let scored: Vec<usize> = (0..n).filter(|&i| oob_n[i] > 0).collect();
        let oob_mse = (!scored.is_empty()).then(|| {
            scored
                .iter()
                .map(|&i| (oob_sum[i] / oob_n[i] as f64 - targets[i]).powi(2))
                .sum::<f64>()
                / scored.len() as f64
        });

        Ok(Self {
            schema: schema.clone(),
            schema_hash: hash,
            params: params.clone(),
            trees: grown.into_iter().map(|g| g.0).collect(),
            oob_mse,
            importances,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    /// Out-of-bag mean squared error, if any sample was ever out of bag.
    pub fn oob_mse(&self) -> Option<f64> {
        self.oob_mse
    }

    /// Normalized impurity decrease per feature.
    pub fn feature_importances(&self) -> &[f64] {
        &self.importances
    }

    pub fn predict(&self, row: &FeatureVector) -> Result<f64> {
        if row.schema_hash != self.schema_hash || row.len() != self.schema.len() {
            return Err(Error::Contract(format!(
                "feature vector of length {} does not match model schema of length {}",
                row.len(),
                self.schema.len()
            )));
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict(&row.values)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_binary(path, MODEL_MAGIC, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: Self = read_binary(path, MODEL_MAGIC)?;
        if model.schema.hash() != model.schema_hash {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: "stored schema hash does not match its feature names".into(),
            });
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::BlockSet;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(BlockSet::I, 5)
    }

    fn row(s: &FeatureSchema, values: Vec<f64>) -> FeatureVector {
        FeatureVector {
            schema_hash: s.hash(),
            values,
        }
    }

    fn step_data(s: &FeatureSchema, n: usize) -> (Vec<FeatureVector>, Vec<f64>) {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let mut v = vec![0.0; s.len()];
            v[3] = i as f64;
            v[7] = (i % 3) as f64;
            rows.push(row(s, v));
            y.push(if i >= n / 2 { 1.0 } else { 0.0 });
        }
        (rows, y)
    }

    fn small() -> ForestParams {
        ForestParams {
            n_trees: 50,
            max_features: 4,
            ..ForestParams::default()
        }
    }

    #[test]
    fn learns_a_step() {
        let s = schema();
        let (rows, y) = step_data(&s, 40);
        let f = RandomForest::train(&s, &rows, &y, &small()).unwrap();
        let mut lo = vec![0.0; s.len()];
        lo[3] = 2.0;
        let mut hi = vec![0.0; s.len()];
        hi[3] = 37.0;
        assert!(f.predict(&row(&s, lo)).unwrap() < 0.2);
        assert!(f.predict(&row(&s, hi)).unwrap() > 0.8);
        assert!(f.oob_mse().unwrap() < 0.1);
        let imp = f.feature_importances();
        assert!(imp[3] > 0.5, "{imp:?}");
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_tree_without_bootstrap_fits_training_data() {
        let s = schema();
        let (rows, y) = step_data(&s, 30);
        let params = ForestParams {
            n_trees: 1,
            max_features: s.len(),
            bootstrap: false,
            ..ForestParams::default()
        };
        let f = RandomForest::train(&s, &rows, &y, &params).unwrap();
        for (r, t) in rows.iter().zip(&y) {
            assert_eq!(f.predict(r).unwrap(), *t);
        }
        assert_eq!(f.oob_mse(), None);
    }

    #[test]
    fn constant_target_gives_single_leaf() {
        let s = schema();
        let (rows, _) = step_data(&s, 10);
        let y = vec![0.25; 10];
        let f = RandomForest::train(&s, &rows, &y, &small()).unwrap();
        assert!(f.trees.iter().all(|t| t.nodes.len() == 1));
        assert_eq!(f.predict(&rows[0]).unwrap(), 0.25);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let s = schema();
        let (rows, y) = step_data(&s, 25);
        let a = RandomForest::train(&s, &rows, &y, &small()).unwrap();
        let b = RandomForest::train(&s, &rows, &y, &small()).unwrap();
        assert_eq!(a, b);
        let c = RandomForest::train(&s, &rows, &y, &ForestParams { seed: 7, ..small() }).unwrap();
        assert_ne!(a.trees, c.trees);
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let s = schema();
        let (rows, y) = step_data(&s, 10);
        let f = RandomForest::train(&s, &rows, &y, &small()).unwrap();
        let other = FeatureSchema::new(BlockSet::I_II, 5);
        let bad = row(&other, vec![0.0; other.len()]);
        assert!(matches!(f.predict(&bad), Err(Error::Contract(_))));
        assert!(RandomForest::train(&other, &rows, &y, &small()).is_err());
        assert!(RandomForest::train(&s, &[], &[], &small()).is_err());
        assert!(RandomForest::train(&s, &rows, &y[..3], &small()).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let s = schema();
        let (rows, y) = step_data(&s, 20);
        let f = RandomForest::train(&s, &rows, &y, &small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.cfrf");
        f.save(&p).unwrap();
        let g = RandomForest::load(&p).unwrap();
        for r in &rows {
            assert_eq!(f.predict(r).unwrap(), g.predict(r).unwrap());
        }
        std::fs::write(&p, b"XXXXX\x01\x00junk").unwrap();
        assert!(RandomForest::load(&p).is_err());
    }
}
