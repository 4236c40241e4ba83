//! BM25-scored inverted indexes over the knowledge base.
//!
//! Four views are built from a hierarchy: category labels, entity labels,
//! categories tokenized by their member entity ids, and categories tokenized
//! by their parent category ids. The id views treat each id as one atomic
//! token.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::files::{read_binary, write_binary};
use crate::kb::CategoryHierarchy;
use crate::text::tokenize;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

const INDEX_MAGIC: &[u8; 5] = b"CFIX1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexView {
    CategoryLabel,
    EntityLabel,
    CategoryByMembers,
    CategoryByParents,
}

impl IndexView {
    pub const ALL: [IndexView; 4] = [
        IndexView::CategoryLabel,
        IndexView::EntityLabel,
        IndexView::CategoryByMembers,
        IndexView::CategoryByParents,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IndexView::CategoryLabel => "category_label",
            IndexView::EntityLabel => "entity_label",
            IndexView::CategoryByMembers => "category_by_members",
            IndexView::CategoryByParents => "category_by_parents",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

/// Top-k retrieval result, ordered by score descending and then by doc order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoredList {
    pub hits: Vec<Hit>,
    pub k: usize,
}

impl ScoredList {
    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.hits.iter().map(|h| h.id.as_str())
    }

    /// Scores padded with zeros to exactly `k` entries.
    pub fn padded_scores(&self, k: usize) -> Vec<f64> {
        let mut v: Vec<f64> = self.hits.iter().take(k).map(|h| h.score).collect();
        v.resize(k, 0.0);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    view: IndexView,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    postings: HashMap<String, Vec<Posting>>,
    total_length: u64,
}

impl InvertedIndex {
    /// Builds an index from `(doc id, tokens)` pairs. Doc order (used for
    /// tie-breaking) follows the input order.
    pub fn from_documents<I, T>(view: IndexView, docs: I) -> Self
    where
        I: IntoIterator<Item = (String, T)>,
        T: IntoIterator<Item = String>,
    {
        let mut index = Self {
            view,
            doc_ids: Vec::new(),
            doc_lengths: Vec::new(),
            postings: HashMap::new(),
            total_length: 0,
        };
        for (doc, (id, tokens)) in docs.into_iter().enumerate() {
            let doc = doc as u32;
            let mut tf: HashMap<String, u32> = HashMap::new();
            let mut len = 0u32;
            for t in tokens {
                *tf.entry(t).or_default() += 1;
                len += 1;
            }
            let mut terms: Vec<_> = tf.into_iter().collect();
            terms.sort();
            for (t, n) in terms {
                index.postings.entry(t).or_default().push(Posting { doc, tf: n });
            }
            index.doc_ids.push(id);
            index.doc_lengths.push(len);
            index.total_length += len as u64;
        }
        index
    }

    pub fn build(h: &CategoryHierarchy, view: IndexView) -> Self {
        match view {
            IndexView::CategoryLabel => Self::from_documents(
                view,
                h.categories().map(|c| (c.id.clone(), tokenize(&c.label))),
            ),
            IndexView::EntityLabel => Self::from_documents(
                view,
                h.entities().map(|e| (e.id.clone(), tokenize(&e.label))),
            ),
            IndexView::CategoryByMembers => Self::from_documents(
                view,
                h.categories()
                    .map(|c| (c.id.clone(), c.member_ids.iter().cloned().collect::<Vec<_>>())),
            ),
            IndexView::CategoryByParents => Self::from_documents(
                view,
                h.categories()
                    .map(|c| (c.id.clone(), c.parent_ids.iter().cloned().collect::<Vec<_>>())),
            ),
        }
    }

    pub fn view(&self) -> IndexView {
        self.view
    }

    /// N, the number of documents.
    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        if self.doc_ids.is_empty() {
            0.0
        } else {
            self.total_length as f64 / self.doc_ids.len() as f64
        }
    }

    pub fn doc_frequency(&self, token: &str) -> usize {
        self.postings.get(token).map_or(0, Vec::len)
    }

    pub fn postings(&self, token: &str) -> &[Posting] {
        self.postings.get(token).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn doc_id(&self, doc: u32) -> &str {
        &self.doc_ids[doc as usize]
    }

    pub fn doc_length(&self, doc: u32) -> u32 {
        self.doc_lengths[doc as usize]
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    /// ln((N - df + 0.5) / (df + 0.5) + 1); never negative.
    pub fn idf(&self, token: &str) -> f64 {
        let n = self.num_docs() as f64;
        let df = self.doc_frequency(token) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Okapi BM25. Every query token occurrence contributes; documents
    /// without a matching token are not returned.
    pub fn search<S: AsRef<str>>(&self, query: &[S], k: usize) -> ScoredList {
        self.search_filtered(query, k, |_| true)
    }

    /// Like [`search`](Self::search), skipping documents rejected by `keep`.
    pub fn search_filtered<S, F>(&self, query: &[S], k: usize, keep: F) -> ScoredList
    where
        S: AsRef<str>,
        F: Fn(&str) -> bool,
    {
        if query.is_empty() || k == 0 || self.doc_ids.is_empty() {
            return ScoredList { hits: vec![], k };
        }
        let avgdl = self.avg_doc_length();
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for token in query {
            let token = token.as_ref();
            let postings = self.postings(token);
            if postings.is_empty() {
                continue;
            }
            let idf = self.idf(token);
            for p in postings {
                let tf = p.tf as f64;
                let dl = self.doc_lengths[p.doc as usize] as f64;
                let norm = tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / avgdl));
                *scores.entry(p.doc).or_default() += idf * norm;
            }
        }
        let mut ranked: Vec<(u32, f64)> = scores
            .into_iter()
            .filter(|(doc, _)| keep(&self.doc_ids[*doc as usize]))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        ScoredList {
            hits: ranked
                .into_iter()
                .map(|(doc, score)| Hit {
                    id: self.doc_ids[doc as usize].clone(),
                    score,
                })
                .collect(),
            k,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_binary(path, INDEX_MAGIC, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_binary(path, INDEX_MAGIC)
    }
}

/// The four views built together.
#[derive(Debug, Clone)]
pub struct IndexSet {
    pub category_label: InvertedIndex,
    pub entity_label: InvertedIndex,
    pub category_by_members: InvertedIndex,
    pub category_by_parents: InvertedIndex,
}

impl IndexSet {
    pub fn build(h: &CategoryHierarchy) -> Self {
        Self {
            category_label: InvertedIndex::build(h, IndexView::CategoryLabel),
            entity_label: InvertedIndex::build(h, IndexView::EntityLabel),
            category_by_members: InvertedIndex::build(h, IndexView::CategoryByMembers),
            category_by_parents: InvertedIndex::build(h, IndexView::CategoryByParents),
        }
    }

    pub fn get(&self, view: IndexView) -> &InvertedIndex {
        match view {
            IndexView::CategoryLabel => &self.category_label,
            IndexView::EntityLabel => &self.entity_label,
            IndexView::CategoryByMembers => &self.category_by_members,
            IndexView::CategoryByParents => &self.category_by_parents,
        }
    }

    /// Writes `<view>.cfix` files into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
        for view in IndexView::ALL {
            self.get(view).save(&dir.join(format!("{}.cfix", view.name())))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let load = |view: IndexView| -> Result<InvertedIndex> {
            let idx = InvertedIndex::load(&dir.join(format!("{}.cfix", view.name())))?;
            if idx.view() != view {
                return Err(crate::Error::Format {
                    path: dir.join(format!("{}.cfix", view.name())),
                    message: format!("holds view {:?}", idx.view()),
                });
            }
            Ok(idx)
        };
        Ok(Self {
            category_label: load(IndexView::CategoryLabel)?,
            entity_label: load(IndexView::EntityLabel)?,
            category_by_members: load(IndexView::CategoryByMembers)?,
            category_by_parents: load(IndexView::CategoryByParents)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::tests::{cat, ent};
    use std::collections::HashSet;

    fn toy(docs: &[(&str, &str)]) -> InvertedIndex {
        InvertedIndex::from_documents(
            IndexView::CategoryLabel,
            docs.iter().map(|(id, text)| (id.to_string(), tokenize(text))),
        )
    }

    #[test]
    fn empty_index() {
        let idx = InvertedIndex::build(&CategoryHierarchy::default(), IndexView::CategoryLabel);
        assert_eq!(idx.num_docs(), 0);
        assert!(idx.search(&["a"], 3).is_empty());
    }

    #[test]
    fn member_view_uses_ids_as_tokens() {
        let (h, _) = CategoryHierarchy::from_records(
            vec![cat("c1", "Cat", &[], &["e1", "e2"])],
            vec![ent("e1", "Entity one"), ent("e2", "Entity two")],
        )
        .unwrap();
        let idx = InvertedIndex::build(&h, IndexView::CategoryByMembers);
        assert_eq!(idx.postings("e1"), [Posting { doc: 0, tf: 1 }]);
        assert_eq!(idx.postings("e2"), [Posting { doc: 0, tf: 1 }]);
        assert_eq!(idx.doc_id(0), "c1");
    }

    #[test]
    fn document_frequencies_match_hand_count() {
        let (h, _) = CategoryHierarchy::from_records(
            vec![
                cat("c1", "Rivers of Norway", &[], &[]),
                cat("c2", "Lakes of Norway", &[], &[]),
                cat("c3", "Rivers of Sweden", &[], &[]),
                cat("c4", "Norway", &[], &[]),
                cat("c5", "Rivers", &[], &[]),
            ],
            vec![],
        )
        .unwrap();
        let idx = InvertedIndex::build(&h, IndexView::CategoryLabel);
        assert_eq!(idx.doc_frequency("rivers"), 3);
        assert_eq!(idx.doc_frequency("norway"), 3);
        assert_eq!(idx.doc_frequency("of"), 3);
        assert_eq!(idx.doc_frequency("lakes"), 1);
        assert_eq!(idx.doc_frequency("sweden"), 1);
        assert_eq!(idx.doc_frequency("fjords"), 0);
        assert_eq!(idx.avg_doc_length(), 11.0 / 5.0);
    }

    #[test]
    fn single_doc_hand_value() {
        let idx = toy(&[("d1", "a b")]);
        let hits = idx.search(&["a"], 1);
        // tf = 1, df = 1, N = 1, dl = avgdl: tf part = 2.2 / 2.2 = 1.
        let expected = ((1.0f64 - 1.0 + 0.5) / 1.5 + 1.0).ln();
        assert_eq!(hits.len(), 1);
        assert!((hits.hits[0].score - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_or_unknown_query() {
        let idx = toy(&[("d1", "a b")]);
        assert!(idx.search::<&str>(&[], 3).is_empty());
        assert!(idx.search(&["zzz"], 3).is_empty());
    }

    #[test]
    fn ties_follow_doc_order() {
        let idx = toy(&[("b", "x y"), ("a", "x y"), ("c", "x z")]);
        let ids: Vec<_> = idx.search(&["x"], 3).ids().map(str::to_string).collect();
        assert_eq!(ids, ["b", "a", "c"]);
    }

    #[test]
    fn filtered_search_skips_docs() {
        let idx = toy(&[("a", "x"), ("b", "x x")]);
        let hits = idx.search_filtered(&["x"], 5, |id| id != "b");
        assert_eq!(hits.ids().collect::<Vec<_>>(), ["a"]);
    }

    #[test]
    fn persistence_round_trip_and_magic() {
        let dir = tempfile::tempdir().unwrap();
        let idx = toy(&[("a", "x y"), ("b", "y z")]);
        let path = dir.path().join("i.cfix");
        idx.save(&path).unwrap();
        assert_eq!(InvertedIndex::load(&path).unwrap(), idx);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = b'9';
        std::fs::write(&path, bytes).unwrap();
        assert!(InvertedIndex::load(&path).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn corpus() -> impl Strategy<Value = Vec<Vec<String>>> {
            prop::collection::vec(prop::collection::vec("[a-e]", 0..6), 1..12)
        }

        proptest! {
            #[test]
            fn scores_non_negative_and_prefix_stable(docs in corpus(), query in prop::collection::vec("[a-f]", 1..4), k in 1usize..8) {
                let idx = InvertedIndex::from_documents(
                    IndexView::CategoryLabel,
                    docs.iter().enumerate().map(|(i, d)| (format!("d{i:02}"), d.clone())),
                );
                let a = idx.search(&query, k);
                let b = idx.search(&query, k + 1);
                prop_assert!(a.hits.iter().all(|h| h.score >= 0.0));
                prop_assert_eq!(&a.hits[..], &b.hits[..a.len()]);
                for w in a.hits.windows(2) {
                    prop_assert!(w[0].score >= w[1].score);
                }
            }

            #[test]
            fn df_equals_distinct_docs(docs in corpus()) {
                let idx = InvertedIndex::from_documents(
                    IndexView::CategoryLabel,
                    docs.iter().enumerate().map(|(i, d)| (format!("d{i}"), d.clone())),
                );
                for tok in idx.vocabulary() {
                    let distinct: HashSet<_> = docs.iter().enumerate().filter(|(_, d)| d.iter().any(|t| t == tok)).map(|(i, _)| i).collect();
                    prop_assert_eq!(idx.doc_frequency(tok), distinct.len());
                }
            }

            #[test]
            fn non_matching_doc_preserves_order(len in 1usize..5, n in 1usize..10, seed in prop::collection::vec("[a-e]", 50), token in "[a-e]") {
                // Equal-length documents keep avgdl fixed, so only IDF moves.
                let docs: Vec<Vec<String>> = (0..n).map(|i| seed[i * len..(i + 1) * len].to_vec()).collect();
                let build = |extra: bool| {
                    let mut all = docs.clone();
                    if extra {
                        all.push(vec!["zz".to_string(); len]);
                    }
                    InvertedIndex::from_documents(
                        IndexView::CategoryLabel,
                        all.into_iter().enumerate().map(|(i, d)| (format!("d{i:02}"), d)),
                    )
                };
                let before = build(false).search(std::slice::from_ref(&token), 100);
                let after = build(true).search(&[token], 100);
                prop_assert_eq!(before.ids().collect::<Vec<_>>(), after.ids().collect::<Vec<_>>());
                for (x, y) in before.hits.iter().zip(&after.hits) {
                    prop_assert!(y.score >= x.score);
                }
            }
        }
    }
}
