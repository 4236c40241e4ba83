use std::collections::BTreeSet;
use std::sync::Arc;

use crate::index::IndexSet;
use crate::kb::{CategoryHierarchy, CategoryId};
use crate::text::{label_key, EntityMatcher, Lexicon, PhraseStats};
use crate::topic::TopicGraph;

/// A hierarchy together with every lookup structure derived from it.
/// Immutable once built; share it behind an `Arc`.
#[derive(Debug, Clone)]
pub struct KbContext {
    pub hierarchy: Arc<CategoryHierarchy>,
    pub lexicon: Lexicon,
    pub phrases: PhraseStats,
    pub entities: EntityMatcher,
    pub indexes: IndexSet,
    pub graph: TopicGraph,
    /// Label keys of every category, for redundancy checks.
    pub category_keys: BTreeSet<String>,
}

impl KbContext {
    pub fn build(
        hierarchy: Arc<CategoryHierarchy>,
        lexicon: Lexicon,
        graph_exclusions: &BTreeSet<CategoryId>,
    ) -> Self {
        let graph = TopicGraph::build(&hierarchy, graph_exclusions, &lexicon);
        let indexes = IndexSet::build(&hierarchy);
        Self::from_parts(hierarchy, lexicon, indexes, graph)
    }

    /// Uses prebuilt indexes and graph (e.g. loaded from disk).
    pub fn from_parts(
        hierarchy: Arc<CategoryHierarchy>,
        lexicon: Lexicon,
        indexes: IndexSet,
        graph: TopicGraph,
    ) -> Self {
        let phrases = PhraseStats::build(hierarchy.categories().map(|c| c.label.as_str()));
        let category_keys = hierarchy.categories().map(|c| label_key(&c.label)).collect();
        let entities = EntityMatcher::new(hierarchy.entities().map(|e| (e.id.as_str(), e.label.as_str())));
        Self {
            hierarchy,
            lexicon,
            phrases,
            entities,
            indexes,
            graph,
            category_keys,
        }
    }
}
