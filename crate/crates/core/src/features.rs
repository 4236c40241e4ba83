//! Feature blocks for candidate ranking.
//!
//! * Block I (structure, 11 values): label shape, prepositions, stopwords,
//!   entity mentions and category-corpus term frequencies.
//! * Block II (content, 8·k values): top-k BM25 scores against the four
//!   index views plus member/parent overlap ratios with the retrieved
//!   categories.
//! * Block III (importance, 13 values): segment frequencies, member link
//!   counts and the size of the neighbourhood around the proposed parent.
//!
//! Every feature can be computed "leave-one-out" for a category that already
//! exists, so that training examples drawn from the hierarchy do not match
//! themselves.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::context::KbContext;
use crate::error::{Error, Result};
use crate::index::{InvertedIndex, ScoredList};
use crate::kb::{CategoryId, EntityId};
use crate::text::{segment_by_preposition, segment_for_importance, tokenize};

pub const DEFAULT_TOP_K: usize = 5;
pub const STRUCTURE_LEN: usize = 11;
pub const CONTENT_GROUPS: usize = 8;
pub const IMPORTANCE_LEN: usize = 13;

const STRUCTURE_NAMES: [&str; STRUCTURE_LEN] = [
    "len",
    "is_prepos",
    "is_stopwords",
    "is_entity",
    "entity_cat_count",
    "catnum_max",
    "catnum_sum",
    "catnum_avg",
    "termfreq_max",
    "termfreq_sum",
    "termfreq_avg",
];

const CONTENT_NAMES: [&str; CONTENT_GROUPS] = [
    "cat_name_sim",
    "entity_name_sim",
    "entity_sim",
    "entity_overlap",
    "entity_overlap2",
    "parent_cat_sim",
    "parent_cat_overlap",
    "parent_cat_overlap2",
];

const IMPORTANCE_NAMES: [&str; IMPORTANCE_LEN] = [
    "importance_max",
    "importance_sum",
    "importance_avg",
    "inlinks_max",
    "inlinks_sum",
    "inlinks_avg",
    "outlinks_max",
    "outlinks_sum",
    "outlinks_avg",
    "graph_size",
    "graph_stat_max",
    "graph_stat_sum",
    "graph_stat_avg",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockSet {
    pub structure: bool,
    pub content: bool,
    pub importance: bool,
}

impl BlockSet {
    pub const I: BlockSet = BlockSet {
        structure: true,
        content: false,
        importance: false,
    };
    pub const I_II: BlockSet = BlockSet {
        structure: true,
        content: true,
        importance: false,
    };
    pub const I_III: BlockSet = BlockSet {
        structure: true,
        content: false,
        importance: true,
    };
    pub const ALL: BlockSet = BlockSet {
        structure: true,
        content: true,
        importance: true,
    };
}

/// Names and order of the entries of a feature vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub blocks: BlockSet,
    pub k: usize,
}

impl FeatureSchema {
    pub fn new(blocks: BlockSet, k: usize) -> Self {
        Self { blocks, k }
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.len());
        if self.blocks.structure {
            names.extend(STRUCTURE_NAMES.iter().map(|s| s.to_string()));
        }
        if self.blocks.content {
            for group in CONTENT_NAMES {
                names.extend((1..=self.k).map(|i| format!("{group}_{i}")));
            }
        }
        if self.blocks.importance {
            names.extend(IMPORTANCE_NAMES.iter().map(|s| s.to_string()));
        }
        names
    }

    pub fn len(&self) -> usize {
        let b = self.blocks;
        (b.structure as usize) * STRUCTURE_LEN
            + (b.content as usize) * CONTENT_GROUPS * self.k
            + (b.importance as usize) * IMPORTANCE_LEN
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn needs_parent(&self) -> bool {
        self.blocks.importance
    }

    /// Stable hash of the ordered feature names.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.names().join("\n").as_bytes());
        u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub schema_hash: u64,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// What is being featurized.
#[derive(Debug, Clone, Copy)]
pub struct FeatureInput<'a> {
    pub label: &'a str,
    /// 𝓔_c, the (estimated) member entities.
    pub members: &'a BTreeSet<EntityId>,
    pub parent: Option<&'a str>,
    /// An existing category to leave out of every corpus statistic.
    pub exclude: Option<&'a str>,
}

/// max, sum, avg; all zero for an empty input.
pub fn aggregate(values: impl IntoIterator<Item = f64>) -> [f64; 3] {
    let mut max = 0.0f64;
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        max = if n == 0 { v } else { max.max(v) };
        sum += v;
        n += 1;
    }
    if n == 0 {
        [0.0; 3]
    } else {
        [max, sum, sum / n as f64]
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub struct FeatureExtractor<'a> {
    ctx: &'a KbContext,
    k: usize,
}

impl<'a> FeatureExtractor<'a> {
    pub fn new(ctx: &'a KbContext, k: usize) -> Self {
        assert!(k > 0, "k must be positive");
        Self { ctx, k }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    fn search(&self, idx: &InvertedIndex, query: &[String], exclude: Option<&str>) -> ScoredList {
        match exclude {
            Some(ex) => idx.search_filtered(query, self.k, |id| id != ex),
            None => idx.search(query, self.k),
        }
    }

    /// Number of categories of an entity, minus the excluded one.
    fn category_count(&self, entity: &str, exclude: Option<&str>) -> usize {
        let cats = self.ctx.hierarchy.categories_of(entity);
        cats.len() - exclude.map_or(0, |ex| cats.contains(ex) as usize)
    }

    fn excluded_label_tokens(&self, exclude: Option<&str>) -> BTreeSet<String> {
        exclude
            .and_then(|id| self.ctx.hierarchy.category(id))
            .map(|c| tokenize(&c.label).into_iter().collect())
            .unwrap_or_default()
    }

    pub fn structure(&self, label: &str, exclude: Option<&str>) -> [f64; STRUCTURE_LEN] {
        let lex = &self.ctx.lexicon;
        let tokens = tokenize(label);
        let is_prepos = tokens.iter().any(|t| lex.is_preposition(t));
        let is_stop = tokens
            .iter()
            .any(|t| lex.is_stopword(t) && !lex.is_preposition(t));

        let exact = self.ctx.entities.exact(label);
        let entity_cats = exact
            .iter()
            .map(|e| self.category_count(e, exclude))
            .max()
            .unwrap_or(0);

        let named = self.ctx.entities.detect(label);
        let catnum = aggregate(named.iter().map(|e| self.category_count(e, exclude) as f64));

        let own = self.excluded_label_tokens(exclude);
        let distinct: BTreeSet<&String> = tokens.iter().collect();
        let termfreq = aggregate(distinct.into_iter().map(|t| {
            let df = self.ctx.indexes.category_label.doc_frequency(t);
            (df - own.contains(t) as usize) as f64
        }));

        [
            tokens.len() as f64,
            is_prepos as u8 as f64,
            is_stop as u8 as f64,
            (!exact.is_empty()) as u8 as f64,
            entity_cats as f64,
            catnum[0],
            catnum[1],
            catnum[2],
            termfreq[0],
            termfreq[1],
            termfreq[2],
        ]
    }

    fn overlaps<F>(&self, hits: &ScoredList, estimate: &BTreeSet<String>, items_of: F) -> (Vec<f64>, Vec<f64>)
    where
        F: Fn(&str) -> Option<&'a BTreeSet<String>>,
    {
        let mut to_estimate = vec![0.0; self.k];
        let mut to_retrieved = vec![0.0; self.k];
        for (i, hit) in hits.hits.iter().take(self.k).enumerate() {
            let Some(items) = items_of(&hit.id) else {
                continue;
            };
            let shared = estimate.intersection(items).count();
            to_estimate[i] = ratio(shared, estimate.len());
            to_retrieved[i] = ratio(shared, items.len());
        }
        (to_estimate, to_retrieved)
    }

    pub fn content(&self, label: &str, members: &BTreeSet<EntityId>, exclude: Option<&str>) -> Vec<f64> {
        let h = &self.ctx.hierarchy;
        let idx = &self.ctx.indexes;
        let tokens = tokenize(label);
        let mut out = Vec::with_capacity(CONTENT_GROUPS * self.k);

        let by_label = self.search(&idx.category_label, &tokens, exclude);
        out.extend(by_label.padded_scores(self.k));
        out.extend(idx.entity_label.search(&tokens, self.k).padded_scores(self.k));

        let member_query: Vec<String> = members.iter().cloned().collect();
        let by_members = self.search(&idx.category_by_members, &member_query, exclude);
        let (o1, o2) = self.overlaps(&by_members, members, |id| h.category(id).map(|c| &c.member_ids));
        out.extend(by_members.padded_scores(self.k));
        out.extend(o1);
        out.extend(o2);

        // 𝒞_c for a category that does not exist yet: parents of the
        // label-similar categories.
        let parents: BTreeSet<CategoryId> = by_label
            .ids()
            .filter_map(|id| h.category(id))
            .flat_map(|c| c.parent_ids.iter().cloned())
            .filter(|p| Some(p.as_str()) != exclude)
            .collect();
        let parent_query: Vec<String> = parents.iter().cloned().collect();
        let by_parents = self.search(&idx.category_by_parents, &parent_query, exclude);
        let (p1, p2) = self.overlaps(&by_parents, &parents, |id| h.category(id).map(|c| &c.parent_ids));
        out.extend(by_parents.padded_scores(self.k));
        out.extend(p1);
        out.extend(p2);
        out
    }

    pub fn importance(
        &self,
        label: &str,
        parent: &str,
        members: &BTreeSet<EntityId>,
        exclude: Option<&str>,
    ) -> Result<[f64; IMPORTANCE_LEN]> {
        let h = &self.ctx.hierarchy;
        let parent_rec = h.category(parent).ok_or_else(|| Error::NotFound {
            kind: "category",
            id: parent.to_string(),
        })?;

        let own_phrases: Option<BTreeSet<String>> = exclude.and_then(|id| h.category(id)).map(|c| {
            let toks = tokenize(&c.label);
            (0..toks.len())
                .flat_map(|s| (s + 1..=toks.len()).map(move |e| (s, e)))
                .map(|(s, e)| toks[s..e].join(" "))
                .collect()
        });
        let segments = segment_for_importance(label, &self.ctx.lexicon, &self.ctx.phrases);
        let importance = aggregate(segments.segments.iter().filter(|s| !s.is_preposition()).map(|s| {
            let n = self.ctx.phrases.count(&s.text);
            let own = own_phrases.as_ref().is_some_and(|p| p.contains(&s.text)) as u32;
            (n - own.min(n)) as f64
        }));

        let records: Vec<_> = members.iter().filter_map(|e| h.entity(e)).collect();
        let inlinks = aggregate(records.iter().map(|e| e.inlink_count as f64));
        let outlinks = aggregate(records.iter().map(|e| e.outlink_count as f64));

        let siblings = h
            .children(parent)
            .iter()
            .filter(|c| Some(c.as_str()) != exclude)
            .count();
        let graph_size = members.len() + siblings + parent_rec.parent_ids.len();

        let graph_stat = aggregate(members.iter().map(|e| {
            h.categories_of(e)
                .iter()
                .filter(|c| Some(c.as_str()) != exclude)
                .filter_map(|c| h.category(c))
                .filter(|c| c.parent_ids.contains(parent))
                .count() as f64
        }));

        Ok([
            importance[0],
            importance[1],
            importance[2],
            inlinks[0],
            inlinks[1],
            inlinks[2],
            outlinks[0],
            outlinks[1],
            outlinks[2],
            graph_size as f64,
            graph_stat[0],
            graph_stat[1],
            graph_stat[2],
        ])
    }

    /// Concatenates the requested blocks in schema order.
    pub fn assemble(&self, schema: &FeatureSchema, input: &FeatureInput<'_>) -> Result<FeatureVector> {
        if schema.k != self.k {
            return Err(Error::Contract(format!(
                "schema expects k = {}, extractor uses k = {}",
                schema.k, self.k
            )));
        }
        if schema.needs_parent() != input.parent.is_some() {
            return Err(Error::Contract(if schema.needs_parent() {
                "importance features need a parent category".into()
            } else {
                "a parent was given but the schema has no importance block".into()
            }));
        }
        let mut values = Vec::with_capacity(schema.len());
        if schema.blocks.structure {
            values.extend(self.structure(input.label, input.exclude));
        }
        if schema.blocks.content {
            values.extend(self.content(input.label, input.members, input.exclude));
        }
        if let (true, Some(parent)) = (schema.blocks.importance, input.parent) {
            values.extend(self.importance(input.label, parent, input.members, input.exclude)?);
        }
        debug_assert_eq!(values.len(), schema.len());
        for v in &mut values {
            if !v.is_finite() {
                *v = 0.0;
            }
        }
        Ok(FeatureVector {
            schema_hash: schema.hash(),
            values,
        })
    }
}

/// Term segments used by parent scoring: content segments of a label.
pub fn content_segments(ctx: &KbContext, label: &str) -> Vec<String> {
    segment_by_preposition(label, &ctx.lexicon).content_terms()
}

/// Writes feature rows as CSV with a header of canonical names, optionally
/// followed by a `target` column.
pub fn write_csv<W: Write>(
    out: W,
    schema: &FeatureSchema,
    rows: &[(String, FeatureVector, Option<f64>)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let has_target = rows.iter().any(|r| r.2.is_some());
    let mut header = vec!["id".to_string()];
    header.extend(schema.names());
    if has_target {
        header.push("target".into());
    }
    let csv_err = |e: csv::Error| Error::Contract(format!("csv: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for (id, fv, target) in rows {
        if fv.schema_hash != schema.hash() {
            return Err(Error::Contract(format!("row {id} has a different schema")));
        }
        let mut rec = vec![id.clone()];
        rec.extend(fv.values.iter().map(|v| v.to_string()));
        if has_target {
            rec.push(target.map(|t| t.to_string()).unwrap_or_default());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Contract(format!("csv: {e}")))
}
