//! Tokenization and label segmentation.
//!
//! Everything that turns a category label into terms lives here so that
//! features, the topic graph and importance estimation agree on the same
//! units. Labels are compared through [`label_key`], the space-joined token
//! sequence; segment lists always join back to that key.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_PREPOSITIONS: &str = include_str!("../data/prepositions.txt");
const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

/// Longest phrase (in tokens) tracked by [`PhraseStats`].
pub const MAX_PHRASE_LEN: usize = 8;

/// Lowercase word tokens. Punctuation is stripped except for hyphens inside
/// a word; apostrophes are dropped without splitting the word.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let flush = |current: &mut String, tokens: &mut Vec<String>| {
        let trimmed = current.trim_matches('-');
        if !trimmed.is_empty() {
            tokens.push(trimmed.to_string());
        }
        current.clear();
    };
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '-' {
            current.extend(ch.to_lowercase());
        } else if ch == '\'' || ch == '\u{2019}' {
            continue;
        } else {
            flush(&mut current, &mut tokens);
        }
    }
    flush(&mut current, &mut tokens);
    tokens
}

/// Lowercased label with runs of whitespace collapsed; used for duplicate
/// detection.
pub fn normalize_label(label: &str) -> String {
    label
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Space-joined token sequence of a label.
pub fn label_key(label: &str) -> String {
    tokenize(label).join(" ")
}

fn word_list(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

/// Preposition and stopword lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    prepositions: HashSet<String>,
    stopwords: HashSet<String>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Self {
            prepositions: word_list(DEFAULT_PREPOSITIONS),
            stopwords: word_list(DEFAULT_STOPWORDS),
        }
    }
}

impl Lexicon {
    pub fn new<I, J, S, T>(prepositions: I, stopwords: J) -> Self
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = T>,
        S: AsRef<str>,
        T: AsRef<str>,
    {
        Self {
            prepositions: prepositions
                .into_iter()
                .map(|s| s.as_ref().to_lowercase())
                .collect(),
            stopwords: stopwords
                .into_iter()
                .map(|s| s.as_ref().to_lowercase())
                .collect(),
        }
    }

    /// Replaces the preposition list with the contents of a
    /// one-token-per-line file.
    pub fn with_prepositions_file(mut self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.prepositions = word_list(&text);
        Ok(self)
    }

    pub fn is_preposition(&self, token: &str) -> bool {
        self.prepositions.contains(token)
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token)
    }

    pub fn prepositions(&self) -> impl Iterator<Item = &str> {
        self.prepositions.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Prefix,
    Preposition,
    Suffix,
    Token,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub text: String,
    pub kind: SegmentKind,
}

impl Segment {
    fn new(tokens: &[String], kind: SegmentKind) -> Self {
        Self {
            text: tokens.join(" "),
            kind,
        }
    }

    pub fn is_preposition(&self) -> bool {
        self.kind == SegmentKind::Preposition
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentList {
    pub segments: Vec<Segment>,
}

impl SegmentList {
    pub fn texts(&self) -> Vec<&str> {
        self.segments.iter().map(|s| s.text.as_str()).collect()
    }

    /// Segments that are not prepositions.
    pub fn content_terms(&self) -> Vec<String> {
        self.segments
            .iter()
            .filter(|s| !s.is_preposition())
            .map(|s| s.text.clone())
            .collect()
    }

    pub fn has_preposition(&self) -> bool {
        self.segments.iter().any(Segment::is_preposition)
    }

    pub fn joined(&self) -> String {
        self.texts().join(" ")
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

/// Splits tokens into alternating runs of non-preposition phrases and single
/// preposition tokens.
fn preposition_chunks<'a>(tokens: &'a [String], lexicon: &Lexicon) -> Vec<(bool, &'a [String])> {
    let mut chunks = Vec::new();
    let mut start = 0;
    for (i, tok) in tokens.iter().enumerate() {
        if lexicon.is_preposition(tok) {
            if start < i {
                chunks.push((false, &tokens[start..i]));
            }
            chunks.push((true, &tokens[i..=i]));
            start = i + 1;
        }
    }
    if start < tokens.len() {
        chunks.push((false, &tokens[start..]));
    }
    chunks
}

/// Segments a label at prepositions, keeping the phrases between them
/// whole. Labels without a preposition fall back to one segment per token.
pub fn segment_by_preposition(label: &str, lexicon: &Lexicon) -> SegmentList {
    let tokens = tokenize(label);
    let chunks = preposition_chunks(&tokens, lexicon);
    if !chunks.iter().any(|(prep, _)| *prep) {
        return SegmentList {
            segments: tokens
                .iter()
                .map(|t| Segment::new(std::slice::from_ref(t), SegmentKind::Token))
                .collect(),
        };
    }
    let last = chunks.len() - 1;
    let segments = chunks
        .iter()
        .enumerate()
        .map(|(i, (prep, toks))| {
            let kind = match (prep, i) {
                (true, _) => SegmentKind::Preposition,
                (false, 0) => SegmentKind::Prefix,
                (false, i) if i == last => SegmentKind::Suffix,
                (false, _) => SegmentKind::Token,
            };
            Segment::new(toks, kind)
        })
        .collect();
    SegmentList { segments }
}

/// Document frequencies of every contiguous phrase (up to
/// [`MAX_PHRASE_LEN`] tokens) over a corpus of category labels.
///
/// A phrase is counted once per label that contains it. Unigram counts double
/// as category-corpus term frequencies.
#[derive(Debug, Clone, Default)]
pub struct PhraseStats {
    counts: HashMap<String, u32>,
    labels: HashMap<String, u32>,
}

impl PhraseStats {
    pub fn build<'a, I>(labels: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut stats = Self::default();
        for label in labels {
            let tokens = tokenize(label);
            *stats.labels.entry(tokens.join(" ")).or_default() += 1;
            let mut seen = HashSet::new();
            for start in 0..tokens.len() {
                for end in start + 1..=tokens.len().min(start + MAX_PHRASE_LEN) {
                    let phrase = tokens[start..end].join(" ");
                    if seen.insert(phrase.clone()) {
                        *stats.counts.entry(phrase).or_default() += 1;
                    }
                }
            }
        }
        stats
    }

    /// Number of labels containing `phrase` (a space-joined token sequence).
    pub fn count(&self, phrase: &str) -> u32 {
        self.counts.get(phrase).copied().unwrap_or(0)
    }

    /// Number of corpus labels whose key equals `key`.
    pub fn label_count(&self, key: &str) -> u32 {
        self.labels.get(key).copied().unwrap_or(0)
    }
}

/// Segmentation used by importance estimation: prepositions are isolated;
/// within each phrase the longest prefix found in some other category label
/// is kept whole, then the longest such suffix of the remainder; everything
/// left over becomes single tokens.
pub fn segment_for_importance(label: &str, lexicon: &Lexicon, corpus: &PhraseStats) -> SegmentList {
    let tokens = tokenize(label);
    // When the label itself is part of the corpus, "found in other
    // categories" needs a second occurrence.
    let needed = 1 + corpus.label_count(&tokens.join(" ")).min(1);
    let found = |toks: &[String]| corpus.count(&toks.join(" ")) >= needed;

    let mut segments = Vec::new();
    for (prep, chunk) in preposition_chunks(&tokens, lexicon) {
        if prep {
            segments.push(Segment::new(chunk, SegmentKind::Preposition));
            continue;
        }
        let mut rest = chunk;
        let max_len = chunk.len().min(MAX_PHRASE_LEN);
        if let Some(len) = (2..=max_len).rev().find(|&len| found(&chunk[..len])) {
            segments.push(Segment::new(&chunk[..len], SegmentKind::Prefix));
            rest = &chunk[len..];
        }
        let mut suffix = None;
        let max_len = rest.len().min(MAX_PHRASE_LEN);
        if let Some(len) = (2..=max_len)
            .rev()
            .find(|&len| found(&rest[rest.len() - len..]))
        {
            suffix = Some(Segment::new(&rest[rest.len() - len..], SegmentKind::Suffix));
            rest = &rest[..rest.len() - len];
        }
        segments.extend(
            rest.iter()
                .map(|t| Segment::new(std::slice::from_ref(t), SegmentKind::Token)),
        );
        segments.extend(suffix);
    }
    SegmentList { segments }
}

/// An entity label found inside a category label. `start..end` is a byte
/// span into [`label_key`] of the category label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityMention {
    pub start: usize,
    pub end: usize,
    pub entity_ids: Vec<String>,
}

/// Token-level lookup of entity labels.
#[derive(Debug, Clone, Default)]
pub struct EntityMatcher {
    by_key: HashMap<String, Vec<String>>,
    max_tokens: usize,
}

impl EntityMatcher {
    pub fn new<'a, I>(entities: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut matcher = Self::default();
        for (id, label) in entities {
            let tokens = tokenize(label);
            if tokens.is_empty() {
                continue;
            }
            matcher.max_tokens = matcher.max_tokens.max(tokens.len());
            matcher
                .by_key
                .entry(tokens.join(" "))
                .or_default()
                .push(id.to_string());
        }
        for ids in matcher.by_key.values_mut() {
            ids.sort();
        }
        matcher
    }

    /// Entities whose label equals `label` after tokenization.
    pub fn exact(&self, label: &str) -> &[String] {
        self.by_key
            .get(&label_key(label))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Greedy longest-match, left to right, non-overlapping.
    pub fn mentions(&self, text: &str) -> Vec<EntityMention> {
        let tokens = tokenize(text);
        let mut offsets = Vec::with_capacity(tokens.len());
        let mut pos = 0;
        for t in &tokens {
            offsets.push(pos);
            pos += t.len() + 1;
        }
        let mut mentions = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let longest = (1..=self.max_tokens.min(tokens.len() - i))
                .rev()
                .find_map(|len| {
                    self.by_key
                        .get(&tokens[i..i + len].join(" "))
                        .map(|ids| (len, ids))
                });
            match longest {
                Some((len, ids)) => {
                    let last = i + len - 1;
                    mentions.push(EntityMention {
                        start: offsets[i],
                        end: offsets[last] + tokens[last].len(),
                        entity_ids: ids.clone(),
                    });
                    i += len;
                }
                None => i += 1,
            }
        }
        mentions
    }

    /// The set E_c of entities mentioned in a category label.
    pub fn detect(&self, label: &str) -> BTreeSet<String> {
        self.mentions(label)
            .into_iter()
            .flat_map(|m| m.entity_ids)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(list: &SegmentList) -> Vec<&str> {
        list.texts()
    }

    #[test]
    fn tokenize_examples() {
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("Films directed by Joss Whedon"),
            ["films", "directed", "by", "joss", "whedon"]
        );
        assert_eq!(tokenize("selection-teams"), ["selection-teams"]);
        assert_eq!(tokenize("-edge- (1903), x"), ["edge", "1903", "x"]);
        assert_eq!(tokenize("People's Republic"), ["peoples", "republic"]);
    }

    #[test]
    fn normalize_collapses_space_and_case() {
        assert_eq!(normalize_label("  Rivers   of\tNorway "), "rivers of norway");
    }

    #[test]
    fn preposition_segmentation() {
        let lex = Lexicon::default();
        let s = segment_by_preposition("1903 establishments in Colombia", &lex);
        assert_eq!(texts(&s), ["1903 establishments", "in", "colombia"]);
        assert_eq!(s.segments[0].kind, SegmentKind::Prefix);
        assert_eq!(s.segments[2].kind, SegmentKind::Suffix);
        assert_eq!(texts(&segment_by_preposition("Dragons", &lex)), ["dragons"]);
        assert_eq!(
            texts(&segment_by_preposition("Duty-free zones of Europe", &lex)),
            ["duty-free zones", "of", "europe"]
        );
        assert_eq!(
            texts(&segment_by_preposition("Middle-earth Valar", &lex)),
            ["middle-earth", "valar"]
        );
    }

    #[test]
    fn importance_segmentation() {
        let lex = Lexicon::default();
        let corpus = PhraseStats::build(["North Yorkshire", "Towns in North Yorkshire"]);
        let s = segment_for_importance("Geography of North Yorkshire", &lex, &corpus);
        assert_eq!(texts(&s), ["geography", "of", "north yorkshire"]);

        let corpus = PhraseStats::build(["History", "North Yorkshire"]);
        let s = segment_for_importance("History of North Yorkshire", &lex, &corpus);
        assert_eq!(texts(&s), ["history", "of", "north yorkshire"]);

        let s = segment_for_importance("Ancient stone bridges", &lex, &PhraseStats::default());
        assert_eq!(texts(&s), ["ancient", "stone", "bridges"]);
    }

    #[test]
    fn importance_segmentation_prefix_then_suffix() {
        let lex = Lexicon::default();
        let corpus = PhraseStats::build(["Stone bridges", "Old railway viaducts"]);
        let s = segment_for_importance("Stone bridges and railway viaducts", &lex, &corpus);
        assert_eq!(texts(&s), ["stone bridges", "and", "railway viaducts"]);
        assert_eq!(s.segments[0].kind, SegmentKind::Prefix);
        assert_eq!(s.segments[2].kind, SegmentKind::Suffix);
    }

    #[test]
    fn importance_segmentation_ignores_self() {
        let lex = Lexicon::default();
        // The only occurrence of "north yorkshire" is the label itself.
        let corpus = PhraseStats::build(["Geography of North Yorkshire"]);
        let s = segment_for_importance("Geography of North Yorkshire", &lex, &corpus);
        assert_eq!(texts(&s), ["geography", "of", "north", "yorkshire"]);
    }

    #[test]
    fn entity_detection_longest_match() {
        let m = EntityMatcher::new([("e1", "Joss Whedon"), ("e2", "Films")]);
        assert_eq!(
            m.detect("Films directed by Joss Whedon"),
            BTreeSet::from(["e1".to_string(), "e2".to_string()])
        );
        let m = EntityMatcher::new([("ny", "New York"), ("nyc", "New York City")]);
        assert_eq!(
            m.detect("New York City mayors"),
            BTreeSet::from(["nyc".to_string()])
        );
        assert!(m.detect("Mayors of Boston").is_empty());
        let mentions = m.mentions("New York City mayors");
        assert_eq!(&"new york city mayors"[mentions[0].start..mentions[0].end], "new york city");
    }

    #[test]
    fn phrase_counts_once_per_label() {
        let stats = PhraseStats::build(["a b a b", "b c"]);
        assert_eq!(stats.count("a b"), 1);
        assert_eq!(stats.count("b"), 2);
        assert_eq!(stats.count("z"), 0);
        assert_eq!(stats.label_count("b c"), 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn label() -> impl Strategy<Value = String> {
            prop::collection::vec(
                prop_oneof![
                    Just("in".to_string()),
                    Just("of".to_string()),
                    Just("by".to_string()),
                    "[a-zA-Z][a-z0-9-]{0,6}",
                ],
                0..8,
            )
            .prop_map(|words| words.join(" "))
        }

        proptest! {
            #[test]
            fn preposition_segments_rejoin(label in label()) {
                let lex = Lexicon::default();
                prop_assert_eq!(segment_by_preposition(&label, &lex).joined(), label_key(&label));
            }

            #[test]
            fn importance_isolates_prepositions(label in label(), corpus in prop::collection::vec(label(), 0..6)) {
                let lex = Lexicon::default();
                let stats = PhraseStats::build(corpus.iter().map(String::as_str));
                let segs = segment_for_importance(&label, &lex, &stats);
                prop_assert_eq!(segs.joined(), label_key(&label));
                for seg in &segs.segments {
                    let toks: Vec<&str> = seg.text.split(' ').collect();
                    let has_prep = toks.iter().any(|t| lex.is_preposition(t));
                    prop_assert_eq!(has_prep, seg.is_preposition());
                    if seg.is_preposition() {
                        prop_assert_eq!(toks.len(), 1);
                    }
                }
            }

            #[test]
            fn mentions_do_not_overlap(label in label()) {
                let m = EntityMatcher::new([("a", "in x"), ("b", "x"), ("c", "of"), ("d", "ab cd")]);
                let mentions = m.mentions(&label);
                for pair in mentions.windows(2) {
                    prop_assert!(pair[0].end < pair[1].start);
                }
            }
        }
    }
}
