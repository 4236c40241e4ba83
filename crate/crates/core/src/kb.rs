//! The category system: entities, categories, parent/member links and the
//! reverse indexes derived from them.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::files::read_jsonl;
use crate::text::normalize_label;

pub type CategoryId = String;
pub type EntityId = String;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub id: EntityId,
    pub label: String,
    #[serde(rename = "inlinks", default)]
    pub inlink_count: u64,
    #[serde(rename = "outlinks", default)]
    pub outlink_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryRecord {
    pub id: CategoryId,
    pub label: String,
    #[serde(rename = "parents", default)]
    pub parent_ids: BTreeSet<CategoryId>,
    #[serde(rename = "members", default)]
    pub member_ids: BTreeSet<EntityId>,
}

/// One input case: an entity set plus the page it was found on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySetInput {
    pub case_id: String,
    #[serde(rename = "entities")]
    pub entity_ids: Vec<EntityId>,
    #[serde(default)]
    pub page_title: String,
    #[serde(rename = "context", default)]
    pub context_text: String,
    #[serde(default)]
    pub page_categories: BTreeSet<CategoryId>,
}

pub fn load_inputs(path: &Path) -> Result<Vec<EntitySetInput>> {
    let inputs: Vec<EntitySetInput> = read_jsonl(path)?;
    if let Some(bad) = inputs.iter().find(|i| i.entity_ids.is_empty()) {
        return Err(Error::Contract(format!(
            "case `{}` in {} has an empty entity list",
            bad.case_id,
            path.display()
        )));
    }
    Ok(inputs)
}

/// A reference dropped during loading.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DroppedRef {
    pub category: CategoryId,
    pub target: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub categories: usize,
    pub entities: usize,
    pub dropped_parents: Vec<DroppedRef>,
    pub dropped_members: Vec<DroppedRef>,
    pub dropped_self_parents: Vec<CategoryId>,
}

impl LoadReport {
    pub fn dropped_total(&self) -> usize {
        self.dropped_parents.len() + self.dropped_members.len() + self.dropped_self_parents.len()
    }
}

/// The knowledge base. Forward links live on the records; `entity_categories`
/// (C_e) and `children` are derived and kept consistent by every mutation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CategoryHierarchy {
    categories: BTreeMap<CategoryId, CategoryRecord>,
    entities: BTreeMap<EntityId, EntityRecord>,
    entity_categories: BTreeMap<EntityId, BTreeSet<CategoryId>>,
    children: BTreeMap<CategoryId, BTreeSet<CategoryId>>,
}

fn check_label(label: &str) -> Result<()> {
    if label.trim().is_empty() {
        Err(Error::InvalidLabel(label.to_string()))
    } else {
        Ok(())
    }
}

impl CategoryHierarchy {
    /// Links records, dropping references that do not resolve.
    pub fn from_records(
        categories: impl IntoIterator<Item = CategoryRecord>,
        entities: impl IntoIterator<Item = EntityRecord>,
    ) -> Result<(Self, LoadReport)> {
        let mut h = Self::default();
        for e in entities {
            check_label(&e.label)?;
            if h.entities.contains_key(&e.id) {
                return Err(Error::DuplicateId {
                    kind: "entity",
                    id: e.id,
                });
            }
            h.entities.insert(e.id.clone(), e);
        }
        for c in categories {
            check_label(&c.label)?;
            if h.categories.contains_key(&c.id) {
                return Err(Error::DuplicateId {
                    kind: "category",
                    id: c.id,
                });
            }
            h.categories.insert(c.id.clone(), c);
        }

        let mut report = LoadReport::default();
        let ids: BTreeSet<CategoryId> = h.categories.keys().cloned().collect();
        for c in h.categories.values_mut() {
            let mut kept = BTreeSet::new();
            for p in std::mem::take(&mut c.parent_ids) {
                if p == c.id {
                    report.dropped_self_parents.push(c.id.clone());
                } else if ids.contains(&p) {
                    kept.insert(p);
                } else {
                    report.dropped_parents.push(DroppedRef {
                        category: c.id.clone(),
                        target: p,
                    });
                }
            }
            c.parent_ids = kept;
            let (kept, dropped): (BTreeSet<_>, BTreeSet<_>) = std::mem::take(&mut c.member_ids)
                .into_iter()
                .partition(|m| h.entities.contains_key(m));
            c.member_ids = kept;
            report
                .dropped_members
                .extend(dropped.into_iter().map(|target| DroppedRef {
                    category: c.id.clone(),
                    target,
                }));
        }
        h.rebuild_reverse();
        report.categories = h.categories.len();
        report.entities = h.entities.len();
        if report.dropped_total() > 0 {
            log::warn!(
                "dropped {} dangling parent, {} dangling member and {} self references",
                report.dropped_parents.len(),
                report.dropped_members.len(),
                report.dropped_self_parents.len()
            );
        }
        Ok((h, report))
    }

    /// Loads `categories.jsonl` and `entities.jsonl`.
    pub fn load(categories_path: &Path, entities_path: &Path) -> Result<(Self, LoadReport)> {
        let entities: Vec<EntityRecord> = read_jsonl(entities_path)?;
        let categories: Vec<CategoryRecord> = read_jsonl(categories_path)?;
        Self::from_records(categories, entities)
    }

    fn reverse_indexes(
        &self,
    ) -> (
        BTreeMap<EntityId, BTreeSet<CategoryId>>,
        BTreeMap<CategoryId, BTreeSet<CategoryId>>,
    ) {
        let mut entity_categories: BTreeMap<_, BTreeSet<_>> = BTreeMap::new();
        let mut children: BTreeMap<_, BTreeSet<_>> = BTreeMap::new();
        for c in self.categories.values() {
            for m in &c.member_ids {
                entity_categories
                    .entry(m.clone())
                    .or_default()
                    .insert(c.id.clone());
            }
            for p in &c.parent_ids {
                children.entry(p.clone()).or_default().insert(c.id.clone());
            }
        }
        (entity_categories, children)
    }

    fn rebuild_reverse(&mut self) {
        let (ec, ch) = self.reverse_indexes();
        self.entity_categories = ec;
        self.children = ch;
    }

    /// Rebuilds the reverse indexes from forward links and compares them with
    /// the maintained ones; also checks that every link resolves.
    pub fn is_consistent(&self) -> bool {
        let (ec, ch) = self.reverse_indexes();
        let links_resolve = self.categories.values().all(|c| {
            !c.parent_ids.contains(&c.id)
                && c.parent_ids.iter().all(|p| self.categories.contains_key(p))
                && c.member_ids.iter().all(|m| self.entities.contains_key(m))
        });
        links_resolve && ec == self.entity_categories && ch == self.children
    }

    pub fn category(&self, id: &str) -> Option<&CategoryRecord> {
        self.categories.get(id)
    }

    pub fn entity(&self, id: &str) -> Option<&EntityRecord> {
        self.entities.get(id)
    }

    pub fn contains_category(&self, id: &str) -> bool {
        self.categories.contains_key(id)
    }

    pub fn categories(&self) -> impl Iterator<Item = &CategoryRecord> {
        self.categories.values()
    }

    pub fn entities(&self) -> impl Iterator<Item = &EntityRecord> {
        self.entities.values()
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    fn require(&self, id: &str) -> Result<&CategoryRecord> {
        self.categories.get(id).ok_or_else(|| Error::category(id))
    }

    /// C_e: the categories an entity is a member of.
    pub fn categories_of(&self, entity: &str) -> &BTreeSet<CategoryId> {
        static EMPTY: BTreeSet<CategoryId> = BTreeSet::new();
        self.entity_categories.get(entity).unwrap_or(&EMPTY)
    }

    pub fn children(&self, id: &str) -> &BTreeSet<CategoryId> {
        static EMPTY: BTreeSet<CategoryId> = BTreeSet::new();
        self.children.get(id).unwrap_or(&EMPTY)
    }

    pub fn is_leaf(&self, id: &str) -> bool {
        self.children(id).is_empty()
    }

    /// Transitive closure of child links, excluding `id` itself.
    pub fn descendants(&self, id: &str) -> Result<BTreeSet<CategoryId>> {
        self.require(id)?;
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<&str> = VecDeque::from([id]);
        while let Some(cur) = queue.pop_front() {
            for child in self.children(cur) {
                if child != id && seen.insert(child.clone()) {
                    queue.push_back(child);
                }
            }
        }
        Ok(seen)
    }

    /// The parent with the most members; ties go to the smallest label.
    pub fn largest_parent(&self, id: &str) -> Result<Option<&CategoryRecord>> {
        let c = self.require(id)?;
        Ok(c.parent_ids
            .iter()
            .filter_map(|p| self.categories.get(p))
            .min_by(|a, b| {
                b.member_ids
                    .len()
                    .cmp(&a.member_ids.len())
                    .then_with(|| a.label.cmp(&b.label))
                    .then_with(|| a.id.cmp(&b.id))
            }))
    }

    /// Whether `parent` already has a child whose normalized label equals
    /// `label`'s.
    pub fn has_child_label(&self, parent: &str, label: &str) -> bool {
        let norm = normalize_label(label);
        self.children(parent)
            .iter()
            .filter_map(|c| self.categories.get(c))
            .any(|c| normalize_label(&c.label) == norm)
    }

    fn fresh_id(&self, label: &str) -> CategoryId {
        let base = label.split_whitespace().collect::<Vec<_>>().join("_");
        if !self.categories.contains_key(&base) {
            return base;
        }
        (2..)
            .map(|n| format!("{base}~{n}"))
            .find(|id| !self.categories.contains_key(id))
            .expect("unbounded suffix search")
    }

    /// Adds a new leaf category under `parent`. The id is derived from the
    /// label, so replaying the same insertions yields the same ids.
    pub fn insert_category(
        &mut self,
        label: &str,
        parent: &str,
        members: &BTreeSet<EntityId>,
    ) -> Result<CategoryId> {
        check_label(label)?;
        self.require(parent)?;
        if let Some(missing) = members.iter().find(|m| !self.entities.contains_key(*m)) {
            return Err(Error::entity(missing.clone()));
        }
        if self.has_child_label(parent, label) {
            return Err(Error::Conflict(format!(
                "`{}` already has a child labelled {:?}",
                parent,
                label.trim()
            )));
        }
        let id = self.fresh_id(label.trim());
        let record = CategoryRecord {
            id: id.clone(),
            label: label.split_whitespace().collect::<Vec<_>>().join(" "),
            parent_ids: BTreeSet::from([parent.to_string()]),
            member_ids: members.clone(),
        };
        self.children
            .entry(parent.to_string())
            .or_default()
            .insert(id.clone());
        for m in members {
            self.entity_categories
                .entry(m.clone())
                .or_default()
                .insert(id.clone());
        }
        self.categories.insert(id.clone(), record);
        Ok(id)
    }

    /// Removes one category and every link pointing at it. Its children stay
    /// in the hierarchy and lose this parent.
    pub fn remove_category(&mut self, id: &str) -> Result<CategoryRecord> {
        let record = self.categories.remove(id).ok_or_else(|| Error::category(id))?;
        for p in &record.parent_ids {
            if let Some(set) = self.children.get_mut(p) {
                set.remove(id);
                if set.is_empty() {
                    self.children.remove(p);
                }
            }
        }
        if let Some(kids) = self.children.remove(id) {
            for k in kids {
                if let Some(child) = self.categories.get_mut(&k) {
                    child.parent_ids.remove(id);
                }
            }
        }
        for m in &record.member_ids {
            if let Some(set) = self.entity_categories.get_mut(m) {
                set.remove(id);
                if set.is_empty() {
                    self.entity_categories.remove(m);
                }
            }
        }
        Ok(record)
    }

    /// Removes a category together with all of its descendants.
    pub fn remove_subtree(&mut self, id: &str) -> Result<Vec<CategoryRecord>> {
        let mut doomed: Vec<CategoryId> = self.descendants(id)?.into_iter().collect();
        doomed.insert(0, id.to_string());
        doomed
            .iter()
            .map(|c| self.remove_category(c))
            .collect()
    }

    /// Canonical JSONL serialization `(categories, entities)`, ordered by id.
    pub fn to_jsonl(&self) -> (String, String) {
        let mut cats = String::new();
        for c in self.categories.values() {
            cats.push_str(&serde_json::to_string(c).expect("serializable"));
            cats.push('\n');
        }
        let mut ents = String::new();
        for e in self.entities.values() {
            ents.push_str(&serde_json::to_string(e).expect("serializable"));
            ents.push('\n');
        }
        (cats, ents)
    }

    pub fn save(&self, categories_path: &Path, entities_path: &Path) -> Result<()> {
        let (cats, ents) = self.to_jsonl();
        std::fs::write(categories_path, cats).map_err(|e| Error::io(categories_path, e))?;
        std::fs::write(entities_path, ents).map_err(|e| Error::io(entities_path, e))
    }
}
