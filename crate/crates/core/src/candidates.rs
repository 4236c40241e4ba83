//! Candidate category labels for an input case.
//!
//! Two sources feed the pool: a deterministic extractive generator that only
//! copies words already present in the input or the category vocabulary, and
//! an importer for candidate files produced elsewhere.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::context::KbContext;
use crate::error::{Error, Result};
use crate::files::read_jsonl;
use crate::kb::EntitySetInput;
use crate::text::{normalize_label, tokenize};

pub const MAX_CANDIDATE_TOKENS: usize = 12;
pub const MAX_NGRAM: usize = 8;
pub const DEFAULT_CANDIDATES: usize = 10;

const COMPOSITION_PREPOSITIONS: [&str; 3] = ["in", "of", "from"];

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CandidateSource {
    Extractive,
    Imported(String),
}

impl fmt::Display for CandidateSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CandidateSource::Extractive => f.write_str("extractive"),
            CandidateSource::Imported(tag) => write!(f, "imported:{tag}"),
        }
    }
}

impl FromStr for CandidateSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "extractive" => Ok(CandidateSource::Extractive),
            _ => s
                .strip_prefix("imported:")
                .map(|t| CandidateSource::Imported(t.to_string()))
                .ok_or_else(|| format!("unknown candidate source {s:?}")),
        }
    }
}

impl Serialize for CandidateSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CandidateSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub label: String,
    pub source: CandidateSource,
    pub generation_score: f64,
}

impl Candidate {
    pub fn new(label: impl Into<String>, source: CandidateSource, generation_score: f64) -> Result<Self> {
        let label = label.into();
        let n = tokenize(&label).len();
        if n == 0 || n > MAX_CANDIDATE_TOKENS {
            return Err(Error::InvalidLabel(label));
        }
        Ok(Self {
            label,
            source,
            generation_score,
        })
    }

    pub fn normalized(&self) -> String {
        normalize_label(&self.label)
    }
}

/// Deduplicated candidates, ordered by generation score desc then label.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub candidates: Vec<Candidate>,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Candidate> {
        self.candidates.iter()
    }
}

fn by_score_then_label(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    b.generation_score
        .total_cmp(&a.generation_score)
        .then_with(|| a.label.cmp(&b.label))
}

/// Merges candidate lists; on a normalized-label collision the higher
/// generation score wins.
pub fn pool_merge<'a, I>(lists: I) -> CandidatePool
where
    I: IntoIterator<Item = &'a [Candidate]>,
{
    let mut best: HashMap<String, Candidate> = HashMap::new();
    for list in lists {
        for c in list {
            match best.get_mut(&c.normalized()) {
                Some(kept) => {
                    if by_score_then_label(c, kept).is_lt() {
                        *kept = c.clone();
                    }
                }
                None => {
                    best.insert(c.normalized(), c.clone());
                }
            }
        }
    }
    let mut candidates: Vec<Candidate> = best.into_values().collect();
    candidates.sort_by(by_score_then_label);
    CandidatePool { candidates }
}

/// Text spans that n-grams may not cross.
fn clauses(text: &str) -> impl Iterator<Item = &str> {
    text.split(['.', '!', '?', ';', ':', ',', '(', ')', '\n', '"'])
}

fn extract_ngrams(input: &EntitySetInput, ctx: &KbContext) -> Vec<Candidate> {
    let idx = &ctx.indexes.category_label;
    let mut scored: BTreeMap<String, f64> = BTreeMap::new();
    let texts = std::iter::once(input.page_title.as_str()).chain(clauses(&input.context_text));
    for clause in texts {
        let tokens = tokenize(clause);
        for start in 0..tokens.len() {
            for end in start + 1..=tokens.len().min(start + MAX_NGRAM) {
                let gram = &tokens[start..end];
                if gram.iter().any(|t| idx.doc_frequency(t) == 0) {
                    break;
                }
                let edge = |t: &String| ctx.lexicon.is_preposition(t) || ctx.lexicon.is_stopword(t);
                if edge(&gram[0]) || edge(&gram[gram.len() - 1]) {
                    continue;
                }
                let score: f64 = gram.iter().map(|t| idx.idf(t)).sum();
                scored.entry(gram.join(" ")).or_insert(score);
            }
        }
    }
    let mut out: Vec<Candidate> = scored
        .into_iter()
        .map(|(label, score)| Candidate {
            label,
            source: CandidateSource::Extractive,
            generation_score: score,
        })
        .collect();
    out.sort_by(by_score_then_label);
    if let Some(max) = out.first().map(|c| c.generation_score).filter(|m| *m > 0.0) {
        for c in &mut out {
            c.generation_score /= max;
        }
    }
    out
}

/// Tokens of a category label before its first preposition, if it has one.
fn head_of(label: &str, ctx: &KbContext) -> Option<String> {
    let tokens = tokenize(label);
    let split = tokens.iter().position(|t| ctx.lexicon.is_preposition(t))?;
    (split > 0).then(|| tokens[..split].join(" "))
}

fn compose(input: &EntitySetInput, ctx: &KbContext) -> Vec<Candidate> {
    let h = &ctx.hierarchy;
    let members: Vec<&str> = input
        .entity_ids
        .iter()
        .filter(|e| h.entity(e).is_some())
        .map(String::as_str)
        .collect();
    if members.is_empty() {
        return vec![];
    }
    let mut head_counts: BTreeMap<String, usize> = BTreeMap::new();
    for e in &members {
        let heads: BTreeSet<String> = h
            .categories_of(e)
            .iter()
            .filter_map(|c| h.category(c))
            .filter_map(|c| head_of(&c.label, ctx))
            .collect();
        for head in heads {
            *head_counts.entry(head).or_default() += 1;
        }
    }
    let min_share = if members.len() > 1 { 2 } else { 1 };
    let Some((head, count)) = head_counts
        .into_iter()
        .filter(|(_, n)| *n >= min_share)
        .min_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)))
    else {
        return vec![];
    };

    let inputs: BTreeSet<&str> = members.iter().copied().collect();
    let mut targets = BTreeSet::new();
    for text in [&input.page_title, &input.context_text] {
        let key = tokenize(text).join(" ");
        for m in ctx.entities.mentions(text) {
            if m.entity_ids.iter().all(|e| inputs.contains(e.as_str())) {
                continue;
            }
            targets.insert(key[m.start..m.end].to_string());
        }
    }
    let score = count as f64 / members.len() as f64;
    let idx = &ctx.indexes.category_label;
    let mut out = Vec::new();
    for target in targets {
        if target == head {
            continue;
        }
        for prep in COMPOSITION_PREPOSITIONS {
            if idx.doc_frequency(prep) == 0 {
                continue;
            }
            if let Ok(c) = Candidate::new(format!("{head} {prep} {target}"), CandidateSource::Extractive, score) {
                out.push(c);
            }
        }
    }
    out.sort_by(by_score_then_label);
    out
}

/// Deterministic extractive candidates: scored n-grams of the page title and
/// context whose tokens all occur in category labels, plus "head prep
/// target" compositions built from the entities' shared category heads and
/// KB entities mentioned in the context. At most `m` candidates are kept.
pub fn generate_extractive(input: &EntitySetInput, ctx: &KbContext, m: usize) -> Vec<Candidate> {
    let mut ngrams = extract_ngrams(input, ctx);
    ngrams.truncate(m);
    let mut compositions = compose(input, ctx);
    compositions.truncate(m);
    let mut merged = pool_merge([ngrams.as_slice(), compositions.as_slice()]).candidates;
    merged.truncate(m);
    merged
}

#[derive(Debug, Deserialize)]
struct CandidateLine {
    case_id: String,
    label: String,
    score: f64,
}

#[derive(Debug, Default)]
pub struct ImportedCandidates {
    pub by_case: BTreeMap<String, Vec<Candidate>>,
    pub warnings: Vec<String>,
}

/// Reads `candidates.jsonl`. Lines for cases outside `known_cases` (when
/// given) or with unusable labels are skipped with a warning; scores are
/// clamped to [0, 1].
pub fn import_candidates(
    path: &Path,
    tag: &str,
    known_cases: Option<&BTreeSet<String>>,
) -> Result<ImportedCandidates> {
    let lines: Vec<CandidateLine> = read_jsonl(path)?;
    let mut out = ImportedCandidates::default();
    for (i, line) in lines.into_iter().enumerate() {
        if known_cases.is_some_and(|known| !known.contains(&line.case_id)) {
            out.warnings.push(format!("record {}: unknown case_id {:?}", i + 1, line.case_id));
            continue;
        }
        let mut score = line.score;
        if !(0.0..=1.0).contains(&score) || score.is_nan() {
            let clamped = if score.is_nan() { 0.0 } else { score.clamp(0.0, 1.0) };
            out.warnings
                .push(format!("record {}: score {score} clamped to {clamped}", i + 1));
            score = clamped;
        }
        match Candidate::new(line.label, CandidateSource::Imported(tag.to_string()), score) {
            Ok(c) => out.by_case.entry(line.case_id).or_default().push(c),
            Err(e) => out.warnings.push(format!("record {}: {e}", i + 1)),
        }
    }
    for w in &out.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(out)
}
