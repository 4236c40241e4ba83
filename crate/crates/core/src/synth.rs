//! A small generated knowledge base with planted leaf categories, for
//! end-to-end checks and demos.
//!
//! Leaves are "{Head} in {Country}" with two parents, "{Head} in
//! {Continent}" and "{Country}". A fixed Latin-square subset of leaves stays
//! in the hierarchy so every head and every country keeps some topic-graph
//! coverage; the rest are planted: each gets an input page whose entities
//! are its members.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::kb::{CategoryHierarchy, CategoryRecord, EntityRecord, EntitySetInput, LoadReport};

const CONTINENTS: [(&str, [&str; 3]); 4] = [
    ("Europe", ["Norway", "Sweden", "Finland"]),
    ("Asia", ["Japan", "Nepal", "Vietnam"]),
    ("Africa", ["Kenya", "Ghana", "Morocco"]),
    ("Oceania", ["Australia", "Fiji", "Samoa"]),
];

/// (head, root topic, entity name pattern)
const HEADS: [(&str, &str, &str); 10] = [
    ("Rivers", "Geography", "{} River"),
    ("Lakes", "Geography", "Lake {}"),
    ("Mountains", "Geography", "Mount {}"),
    ("Airports", "Transport", "{} Airport"),
    ("Railway stations", "Transport", "{} station"),
    ("Museums", "Culture", "{} Museum"),
    ("Newspapers", "Culture", "The {} Herald"),
    ("Universities", "Education", "University of {}"),
    ("Football clubs", "Sports", "{} FC"),
    ("Political parties", "Politics", "{} Party"),
];

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "ven", "mar", "ti", "su", "ran", "dor", "el", "qua", "bri", "zen", "mo", "ha", "vel", "tor", "is",
    "ul", "nes", "ko", "pra", "the", "gu", "lin",
];

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    pub entities_per_leaf: usize,
    pub n_test: usize,
    pub n_train: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            entities_per_leaf: 8,
            n_test: 50,
            n_train: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthKb {
    pub hierarchy: CategoryHierarchy,
    pub report: LoadReport,
    /// One input per planted leaf.
    pub inputs: Vec<EntitySetInput>,
    pub test_ids: Vec<String>,
    pub train_ids: Vec<String>,
}

fn id_of(label: &str) -> String {
    label.replace(' ', "_")
}

fn category(label: &str, parents: &[String]) -> CategoryRecord {
    CategoryRecord {
        id: id_of(label),
        label: label.to_string(),
        parent_ids: parents.iter().cloned().collect(),
        member_ids: BTreeSet::new(),
    }
}

fn name(rng: &mut ChaCha8Rng, used: &mut BTreeSet<String>) -> String {
    loop {
        let n = rng.random_range(2..=3);
        let raw: String = (0..n).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
        let mut chars = raw.chars();
        let word = chars.next().expect("non-empty").to_uppercase().chain(chars).collect::<String>();
        if used.insert(word.clone()) {
            return word;
        }
    }
}

/// Whether the (head, country) leaf stays in the hierarchy.
fn kept(head: usize, country: usize) -> bool {
    (head + country).is_multiple_of(3)
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthKb> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cats: Vec<CategoryRecord> = Vec::new();
    let mut ents: Vec<EntityRecord> = Vec::new();
    let mut used = BTreeSet::new();

    cats.push(category("Continents", &[]));
    for root in ["Geography", "Transport", "Culture", "Education", "Sports", "Politics"] {
        cats.push(category(root, &[]));
    }
    for (head, root, _) in HEADS {
        cats.push(category(head, &[id_of(root)]));
    }
    for (continent, countries) in CONTINENTS {
        cats.push(category(continent, &[id_of("Continents")]));
        let countries_in = format!("Countries in {continent}");
        cats.push(category(&countries_in, &[id_of(continent)]));
        for country in countries {
            cats.push(category(country, &[id_of(&countries_in)]));
        }
        for (head, _, _) in HEADS {
            cats.push(category(&format!("{head} in {continent}"), &[id_of(head), id_of(continent)]));
        }
    }

    let mut planted: Vec<(String, usize, &str, &str)> = Vec::new();
    let mut leaf_members: Vec<(usize, usize, Vec<String>)> = Vec::new();
    let mut country_index = 0usize;
    for (continent, countries) in CONTINENTS {
        for country in countries {
            for (h, (head, _, pattern)) in HEADS.iter().enumerate() {
                let label = format!("{head} in {country}");
                let mut leaf = category(&label, &[id_of(&format!("{head} in {continent}")), id_of(country)]);
                let mut members = Vec::new();
                for _ in 0..cfg.entities_per_leaf {
                    let id = format!("E{:04}", ents.len() + 1);
                    let proper = name(&mut rng, &mut used);
                    ents.push(EntityRecord {
                        id: id.clone(),
                        label: pattern.replace("{}", &proper),
                        inlink_count: rng.random_range(5..400),
                        outlink_count: rng.random_range(5..120),
                    });
                    leaf.member_ids.insert(id.clone());
                    members.push(id);
                }
                let continent_cat = cats
                    .iter_mut()
                    .find(|c| c.label == format!("{head} in {continent}"))
                    .expect("continent category");
                for m in &members {
                    if rng.random_bool(0.5) {
                        continent_cat.member_ids.insert(m.clone());
                    }
                }
                if !kept(h, country_index) {
                    planted.push((leaf.id.clone(), h, country, continent));
                }
                leaf_members.push((cats.len(), h, members));
                cats.push(leaf);
            }
            country_index += 1;
        }
    }

    // A few entities also sit in a second leaf of the same head.
    for (slot, head, members) in &leaf_members {
        if rng.random_bool(0.2) {
            let same_head: Vec<usize> = leaf_members
                .iter()
                .filter(|(s, h, _)| s != slot && h == head)
                .map(|(s, _, _)| *s)
                .collect();
            let other = *same_head.choose(&mut rng).expect("other leaves");
            cats[other].member_ids.insert(members[0].clone());
        }
    }

    let pick_noise = |rng: &mut ChaCha8Rng, own: &[String]| loop {
        let e = &ents[rng.random_range(0..ents.len())];
        if !own.contains(&e.id) {
            return e.id.clone();
        }
    };
    let mut inputs = Vec::new();
    for (n, (leaf_id, h, country, continent)) in planted.iter().enumerate() {
        let leaf = cats.iter().find(|c| &c.id == leaf_id).expect("leaf");
        let head = HEADS[*h].0;
        let lower = head.to_lowercase();
        let mut entities: Vec<String> = leaf.member_ids.iter().cloned().collect();
        entities.shuffle(&mut rng);
        entities.pop();
        entities.push(pick_noise(&mut rng, &entities));
        let sample: Vec<&str> = entities
            .iter()
            .take(2)
            .filter_map(|id| ents.iter().find(|e| &e.id == id))
            .map(|e| e.label.as_str())
            .collect();
        let outsider = &ents[rng.random_range(0..ents.len())].label;
        let context = format!(
            "This page collects notable {lower} located within {country}, sorted alphabetically. \
             Well-known examples include {}. Unlike {outsider}, they are listed by region. \
             See also {lower} in {continent} for regional coverage.",
            sample.join(" and ")
        );
        inputs.push(EntitySetInput {
            case_id: format!("planted-{n:03}"),
            entity_ids: entities,
            page_title: format!("List of {lower} in {country}"),
            context_text: context,
            page_categories: BTreeSet::from([leaf_id.clone(), id_of(country)]),
        });
    }

    let mut order: Vec<String> = inputs.iter().map(|i| i.case_id.clone()).collect();
    order.shuffle(&mut rng);
    let test_ids: Vec<String> = order.iter().take(cfg.n_test).cloned().collect();
    let train_ids: Vec<String> = order.iter().skip(cfg.n_test).take(cfg.n_train).cloned().collect();

    let (hierarchy, report) = CategoryHierarchy::from_records(cats, ents)?;
    Ok(SynthKb {
        hierarchy,
        report,
        inputs,
        test_ids,
        train_ids,
    })
}
