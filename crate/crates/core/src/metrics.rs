//! Rank-based evaluation with binary relevance.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// 0/1 gains for the first `k` positions; repeated ids only count once.
fn gains<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>, k: usize) -> Vec<bool> {
    let mut seen = HashSet::new();
    ranking
        .iter()
        .take(k)
        .map(|id| {
            let id = id.as_ref();
            seen.insert(id) && relevant.contains(id)
        })
        .collect()
}

fn discount(rank0: usize) -> f64 {
    1.0 / ((rank0 + 2) as f64).log2()
}

pub fn ndcg_at_k<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>, k: usize) -> f64 {
    assert!(k >= 1, "k must be positive");
    if relevant.is_empty() {
        return 0.0;
    }
    let dcg: f64 = gains(ranking, relevant, k)
        .iter()
        .enumerate()
        .filter(|(_, g)| **g)
        .map(|(i, _)| discount(i))
        .sum();
    let ideal: f64 = (0..relevant.len().min(k)).map(discount).sum();
    dcg / ideal
}

pub fn precision_at_k<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>, k: usize) -> f64 {
    assert!(k >= 1, "k must be positive");
    gains(ranking, relevant, k).iter().filter(|g| **g).count() as f64 / k as f64
}

/// Average precision with denominator min(|relevant|, k).
pub fn map_at_k<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>, k: usize) -> f64 {
    assert!(k >= 1, "k must be positive");
    if relevant.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (i, g) in gains(ranking, relevant, k).into_iter().enumerate() {
        if g {
            hits += 1;
            total += hits as f64 / (i + 1) as f64;
        }
    }
    total / relevant.len().min(k) as f64
}

/// 1-based rank of the first relevant item within the top k.
pub fn first_relevant_rank<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>, k: usize) -> Option<usize> {
    gains(ranking, relevant, k).iter().position(|g| *g).map(|i| i + 1)
}

pub fn mrr_at_k<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>, k: usize) -> f64 {
    assert!(k >= 1, "k must be positive");
    first_relevant_rank(ranking, relevant, k).map_or(0.0, |r| 1.0 / r as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    Ndcg(usize),
    Map(usize),
    Mrr(usize),
    Precision(usize),
}

impl Metric {
    pub fn name(&self) -> String {
        match self {
            Metric::Ndcg(k) => format!("NDCG@{k}"),
            Metric::Map(k) => format!("MAP@{k}"),
            Metric::Mrr(k) => format!("MRR@{k}"),
            Metric::Precision(k) => format!("P@{k}"),
        }
    }

    pub fn eval<S: AsRef<str>>(&self, ranking: &[S], relevant: &BTreeSet<String>) -> f64 {
        match *self {
            Metric::Ndcg(k) => ndcg_at_k(ranking, relevant, k),
            Metric::Map(k) => map_at_k(ranking, relevant, k),
            Metric::Mrr(k) => mrr_at_k(ranking, relevant, k),
            Metric::Precision(k) => precision_at_k(ranking, relevant, k),
        }
    }
}

/// The standard report columns.
pub const REPORT_METRICS: [Metric; 4] = [Metric::Ndcg(1), Metric::Ndcg(10), Metric::Precision(5), Metric::Mrr(10)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub case_id: String,
    pub ranking: Vec<String>,
    pub relevant: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub system: String,
    pub cases: Vec<EvalCase>,
}

impl EvalRun {
    pub fn per_case(&self, metric: Metric) -> Vec<f64> {
        self.cases.iter().map(|c| metric.eval(&c.ranking, &c.relevant)).collect()
    }

    /// Mean over all cases, including those without relevant items.
    pub fn mean(&self, metric: Metric) -> f64 {
        if self.cases.is_empty() {
            return 0.0;
        }
        self.per_case(metric).iter().sum::<f64>() / self.cases.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub p_adjusted: f64,
    /// Differences had zero variance with a non-zero mean.
    pub degenerate: bool,
}

/// Two-tailed paired t-test, p multiplied by `comparisons` and capped at 1.
pub fn paired_ttest_bonferroni(a: &[f64], b: &[f64], comparisons: usize) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Contract("paired t-test needs at least two pairs".into()));
    }
    let m = comparisons.max(1) as f64;
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 || var.sqrt() < 1e-12 * mean.abs().max(1.0) {
        return Ok(if mean == 0.0 {
            TTest {
                t: 0.0,
                p: 1.0,
                p_adjusted: 1.0,
                degenerate: false,
            }
        } else {
            TTest {
                t: f64::INFINITY.copysign(mean),
                p: 0.0,
                p_adjusted: 0.0,
                degenerate: true,
            }
        });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::Contract(e.to_string()))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(TTest {
        t,
        p,
        p_adjusted: (p * m).min(1.0),
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrBucket {
    /// "1", "1/2", ..., "none".
    pub bucket: String,
    pub count: usize,
    pub percent: f64,
    pub cumulative_percent: f64,
}

/// Histogram of first-relevant reciprocal ranks over `k` positions.
pub fn rr_distribution(run: &EvalRun, k: usize) -> Vec<RrBucket> {
    let mut counts = vec![0usize; k + 1];
    for c in &run.cases {
        match first_relevant_rank(&c.ranking, &c.relevant, k) {
            Some(r) => counts[r - 1] += 1,
            None => counts[k] += 1,
        }
    }
    let total = run.cases.len().max(1) as f64;
    let mut cumulative = 0.0;
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| {
            let percent = 100.0 * count as f64 / total;
            cumulative += percent;
            RrBucket {
                bucket: match i {
                    0 => "1".into(),
                    i if i == k => "none".into(),
                    i => format!("1/{}", i + 1),
                },
                count,
                percent,
                cumulative_percent: cumulative,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub system_a: String,
    pub system_b: String,
    pub test: TTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// system → metric → mean.
    pub aggregates: BTreeMap<String, BTreeMap<String, f64>>,
    /// system → metric → per-case values, in case order.
    pub per_case: BTreeMap<String, BTreeMap<String, Vec<f64>>>,
    pub case_ids: Vec<String>,
    pub significance: Vec<Comparison>,
    pub rr_distribution: BTreeMap<String, Vec<RrBucket>>,
}

impl EvalReport {
    /// Evaluates every run and tests every pair of systems on every metric,
    /// with the Bonferroni factor set to the number of system pairs.
    pub fn build(runs: &[EvalRun], metrics: &[Metric]) -> Result<Self> {
        let case_ids: Vec<String> = runs
            .first()
            .map(|r| r.cases.iter().map(|c| c.case_id.clone()).collect())
            .unwrap_or_default();
        for r in runs {
            let ids: Vec<&str> = r.cases.iter().map(|c| c.case_id.as_str()).collect();
            if ids != case_ids.iter().map(String::as_str).collect::<Vec<_>>() {
                return Err(Error::Contract(format!("run `{}` covers different cases", r.system)));
            }
        }
        let mut report = EvalReport {
            aggregates: BTreeMap::new(),
            per_case: BTreeMap::new(),
            case_ids,
            significance: Vec::new(),
            rr_distribution: BTreeMap::new(),
        };
        for r in runs {
            let agg = report.aggregates.entry(r.system.clone()).or_default();
            let pc = report.per_case.entry(r.system.clone()).or_default();
            for m in metrics {
                agg.insert(m.name(), r.mean(*m));
                pc.insert(m.name(), r.per_case(*m));
            }
            report.rr_distribution.insert(r.system.clone(), rr_distribution(r, 10));
        }
        let pairs = runs.len() * runs.len().saturating_sub(1) / 2;
        if report.case_ids.len() >= 2 {
            for (i, a) in runs.iter().enumerate() {
                for b in &runs[i + 1..] {
                    for m in metrics {
                        report.significance.push(Comparison {
                            metric: m.name(),
                            system_a: a.system.clone(),
                            system_b: b.system.clone(),
                            test: paired_ttest_bonferroni(&a.per_case(*m), &b.per_case(*m), pairs)?,
                        });
                    }
                }
            }
        }
        Ok(report)
    }

    /// Plain-text table: one row per system, one column per metric; `*`
    /// marks a significant difference (adjusted p < 0.05) from the first
    /// system.
    pub fn table(&self, systems: &[String], metrics: &[Metric]) -> String {
        let width = systems.iter().map(|s| s.len()).max().unwrap_or(6).max(6);
        let mut out = format!("{:<width$}", "System");
        for m in metrics {
            out.push_str(&format!("  {:>9}", m.name()));
        }
        out.push('\n');
        for s in systems {
            out.push_str(&format!("{s:<width$}"));
            for m in metrics {
                let v = self.aggregates.get(s).and_then(|a| a.get(&m.name())).copied().unwrap_or(0.0);
                let marked = self.significance.iter().any(|c| {
                    c.metric == m.name()
                        && c.system_b == *s
                        && systems.first() == Some(&c.system_a)
                        && c.test.p_adjusted < 0.05
                });
                out.push_str(&format!("  {:>8.4}{}", v, if marked { "*" } else { " " }));
            }
            out.push('\n');
        }
        out
    }
}
