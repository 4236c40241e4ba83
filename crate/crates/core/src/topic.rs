//! Parent-topic graph over label segments.
//!
//! For every category/parent pair, each content segment of the parent
//! (t_a) is linked to each content segment of the child (t_b). The edge
//! weight is P(t_a|t_b) = n(t_a, t_b) / n(t_b), where n(t_a, t_b) counts
//! pairs and n(t_b) counts categories whose label contains t_b. Because a
//! child with several parents contributes one pair per parent, weights can
//! exceed 1; they are used as ranking weights and are not renormalized.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{CategoryHierarchy, CategoryId};
use crate::text::{segment_by_preposition, Lexicon};

pub const DEFAULT_ALPHA: f64 = 2.0;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TopicGraph {
    /// t_b -> (t_a -> n(t_a, t_b))
    edges: BTreeMap<String, BTreeMap<String, u32>>,
    /// n(t_b)
    term_counts: BTreeMap<String, u32>,
    pair_count: u64,
}

fn content_segments(label: &str, lexicon: &Lexicon) -> BTreeSet<String> {
    segment_by_preposition(label, lexicon)
        .content_terms()
        .into_iter()
        .collect()
}

impl TopicGraph {
    /// Counts every non-excluded `(c, c_p)` pair. A pair is skipped when
    /// either side is excluded; excluded categories do not count towards
    /// n(t_b) either.
    pub fn build(h: &CategoryHierarchy, exclusions: &BTreeSet<CategoryId>, lexicon: &Lexicon) -> Self {
        let mut segs: HashMap<&str, BTreeSet<String>> = HashMap::new();
        for c in h.categories() {
            if !exclusions.contains(&c.id) {
                segs.insert(c.id.as_str(), content_segments(&c.label, lexicon));
            }
        }
        let mut g = TopicGraph::default();
        for c in h.categories() {
            let Some(child_terms) = segs.get(c.id.as_str()) else {
                continue;
            };
            for t in child_terms {
                *g.term_counts.entry(t.clone()).or_default() += 1;
            }
            for p in &c.parent_ids {
                let Some(parent_terms) = segs.get(p.as_str()) else {
                    continue;
                };
                g.pair_count += 1;
                for tb in child_terms {
                    let row = g.edges.entry(tb.clone()).or_default();
                    for ta in parent_terms {
                        *row.entry(ta.clone()).or_default() += 1;
                    }
                }
            }
        }
        g
    }

    pub fn pair_count(&self) -> u64 {
        self.pair_count
    }

    pub fn num_edges(&self) -> usize {
        self.edges.values().map(BTreeMap::len).sum()
    }

    /// n(t_b).
    pub fn term_count(&self, child_term: &str) -> u32 {
        self.term_counts.get(child_term).copied().unwrap_or(0)
    }

    /// n(t_a, t_b).
    pub fn pair_term_count(&self, parent_term: &str, child_term: &str) -> u32 {
        self.edges
            .get(child_term)
            .and_then(|row| row.get(parent_term))
            .copied()
            .unwrap_or(0)
    }

    /// P(t_a | t_b); zero when there is no edge.
    pub fn weight(&self, parent_term: &str, child_term: &str) -> f64 {
        let n_ab = self.pair_term_count(parent_term, child_term);
        if n_ab == 0 {
            return 0.0;
        }
        n_ab as f64 / self.term_count(child_term) as f64
    }

    /// Outgoing edges of a child term as `(t_a, P(t_a|t_b))`, in t_a order.
    pub fn out_edges<'a>(&'a self, child_term: &str) -> impl Iterator<Item = (&'a str, f64)> + 'a {
        let n_b = self.term_count(child_term) as f64;
        self.edges
            .get(child_term)
            .into_iter()
            .flat_map(move |row| row.iter().map(move |(ta, n)| (ta.as_str(), *n as f64 / n_b)))
    }

    /// Terms with at least one parent edge.
    pub fn child_terms(&self) -> impl Iterator<Item = &str> {
        self.edges.keys().map(String::as_str)
    }

    pub fn out_degree(&self, child_term: &str) -> usize {
        self.edges.get(child_term).map_or(0, BTreeMap::len)
    }

    /// Writes `t_b TAB t_a TAB n(t_a,t_b) TAB n(t_b)` rows after a
    /// `# pairs` header line. Counts of terms without parent edges are not
    /// stored.
    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "# pairs\t{}", self.pair_count).map_err(io)?;
        for (tb, row) in &self.edges {
            let n_b = self.term_count(tb);
            for (ta, n) in row {
                writeln!(w, "{tb}\t{ta}\t{n}\t{n_b}").map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn load_tsv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut g = TopicGraph::default();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let bad = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            if let Some(rest) = line.strip_prefix("# pairs\t") {
                g.pair_count = rest.trim().parse().map_err(|e| bad(format!("{e}")))?;
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(bad(format!("expected 4 columns, found {}", cols.len())));
            }
            let n_ab: u32 = cols[2].parse().map_err(|e| bad(format!("n(t_a,t_b): {e}")))?;
            let n_b: u32 = cols[3].parse().map_err(|e| bad(format!("n(t_b): {e}")))?;
            if n_b == 0 {
                return Err(bad("n(t_b) must be positive".into()));
            }
            match g.term_counts.insert(cols[0].to_string(), n_b) {
                Some(prev) if prev != n_b => {
                    return Err(bad(format!("inconsistent n(t_b) for {:?}", cols[0])));
                }
                _ => {}
            }
            g.edges
                .entry(cols[0].to_string())
                .or_default()
                .insert(cols[1].to_string(), n_ab);
        }
        Ok(g)
    }
}

/// c̃ = c ∪ T̃_c.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandedQuery {
    pub original_terms: Vec<String>,
    /// Selected topic terms with their best weight, by weight desc then term.
    pub topic_terms: Vec<(String, f64)>,
    pub alpha: f64,
}

impl ExpandedQuery {
    /// Original terms followed by the topic terms not already present.
    pub fn terms(&self) -> Vec<String> {
        let mut out = self.original_terms.clone();
        for (t, _) in &self.topic_terms {
            if !out.contains(t) {
                out.push(t.clone());
            }
        }
        out
    }
}

/// For each original term, selects the parent terms whose weight is at
/// least `max / alpha`; the maximum itself always qualifies.
pub fn expand_query(g: &TopicGraph, terms: &[String], alpha: f64) -> ExpandedQuery {
    assert!(alpha >= 1.0, "alpha must be >= 1, got {alpha}");
    let mut selected: BTreeMap<&str, f64> = BTreeMap::new();
    for tb in terms {
        let edges: Vec<(&str, f64)> = g.out_edges(tb).collect();
        let Some(max) = edges.iter().map(|(_, w)| *w).reduce(f64::max) else {
            continue;
        };
        let threshold = max / alpha;
        for (ta, w) in edges {
            if w >= threshold {
                let best = selected.entry(ta).or_insert(w);
                *best = best.max(w);
            }
        }
    }
    let mut topic_terms: Vec<(String, f64)> =
        selected.into_iter().map(|(t, w)| (t.to_string(), w)).collect();
    topic_terms.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ExpandedQuery {
        original_terms: terms.to_vec(),
        topic_terms,
        alpha,
    }
}

/// φ_H(q, c_p): mean topic-graph weight over all (parent term, query term)
/// combinations.
pub fn hierarchy_score<S: AsRef<str>, T: AsRef<str>>(
    g: &TopicGraph,
    query_terms: &[S],
    parent_terms: &[T],
) -> Result<f64> {
    if query_terms.is_empty() || parent_terms.is_empty() {
        return Err(Error::Contract(
            "hierarchy score needs non-empty query and parent segment lists".into(),
        ));
    }
    let total: f64 = parent_terms
        .iter()
        .map(|ta| {
            query_terms
                .iter()
                .map(|tb| g.weight(ta.as_ref(), tb.as_ref()))
                .sum::<f64>()
        })
        .sum();
    Ok(total / (parent_terms.len() * query_terms.len()) as f64)
}

/// φ_combined = φ_BM25 · φ_H.
pub fn combined_score(bm25: f64, phi_h: f64) -> f64 {
    debug_assert!(bm25 >= 0.0 && phi_h >= 0.0);
    bm25 * phi_h
}
