//! Query normalization and lexical feature extraction.
//!
//! Queries are case-folded, stripped of junk characters and tokenized on
//! whitespace. Stopwords are removed for matching and lexical features, but
//! the unfiltered token list is kept alongside so patterns can still see the
//! full utterance.
//!
//! Lexical features are word n-grams, 1-skip bigrams and per-token character
//! trigrams. Word-level grams are TF-IDF weighted, character grams keep raw
//! term frequency, and the final vector is L2-normalized.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum query length in code points, measured after trimming.
pub const MAX_QUERY_CHARS: usize = 1024;

const BUNDLED_STOPWORDS: &str = include_str!("../assets/stopwords_en.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawQuery {
    pub id: String,
    pub text: String,
    /// Impression count.
    pub weight: f64,
}

impl RawQuery {
    pub fn new(id: impl Into<String>, text: impl Into<String>, weight: f64) -> Result<Self> {
        let text = text.into();
        let len = text.trim().chars().count();
        if len > MAX_QUERY_CHARS {
            return Err(Error::InvalidInput(format!(
                "query is {len} characters, limit is {MAX_QUERY_CHARS}"
            )));
        }
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "query weight must be finite and non-negative, got {weight}"
            )));
        }
        Ok(Self {
            id: id.into(),
            text,
            weight,
        })
    }

    /// A unit-weight query whose id is its text.
    pub fn text(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        Self::new(text.clone(), text, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NormalizedQuery {
    pub original: String,
    /// Stopword-filtered tokens.
    pub tokens: Vec<String>,
    pub tokens_with_stopwords: Vec<String>,
}

impl NormalizedQuery {
    /// Tokens used for matching and features. A query made only of
    /// stopwords ("how are you", "what's up") keeps its full token list so
    /// it does not collapse onto the empty query.
    pub fn content_tokens(&self) -> &[String] {
        if self.tokens.is_empty() {
            &self.tokens_with_stopwords
        } else {
            &self.tokens
        }
    }

    /// Exact-match key.
    pub fn key(&self) -> String {
        self.content_tokens().join(" ")
    }

    /// Normalized text including stopwords; the surface patterns run against.
    pub fn surface(&self) -> String {
        self.tokens_with_stopwords.join(" ")
    }

    pub fn is_empty(&self) -> bool {
        self.tokens_with_stopwords.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stopwords {
    words: HashSet<String>,
}

impl Stopwords {
    /// The fixed English list shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_STOPWORDS)
    }

    pub fn empty() -> Self {
        Self {
            words: HashSet::new(),
        }
    }

    /// One token per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Self {
        Self::from_words(read_term_list(text))
    }

    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            words: words
                .into_iter()
                .map(|w| w.as_ref().trim().to_lowercase())
                .filter(|w| !w.is_empty())
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(token)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

impl Default for Stopwords {
    fn default() -> Self {
        Self::bundled()
    }
}

/// Parses a one-term-per-line list, dropping blanks and `#` comments.
pub(crate) fn read_term_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

fn keep_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\'' || c.is_whitespace()
}

/// Case-folds, replaces junk characters with spaces and tokenizes on
/// whitespace. Apostrophes survive inside tokens ("don't") but are trimmed
/// from token edges.
pub fn tokenize(text: &str) -> Vec<String> {
    let folded: String = text
        .to_lowercase()
        .chars()
        .map(|c| match c {
            '\u{2018}' | '\u{2019}' => '\'',
            c if keep_char(c) => c,
            _ => ' ',
        })
        .collect();
    folded
        .split_whitespace()
        .map(|t| t.trim_matches('\''))
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

pub fn normalize(raw: &RawQuery, stopwords: &Stopwords) -> NormalizedQuery {
    normalize_text(&raw.text, stopwords)
}

pub fn normalize_text(text: &str, stopwords: &Stopwords) -> NormalizedQuery {
    let tokens_with_stopwords = tokenize(text);
    let tokens = tokens_with_stopwords
        .iter()
        .filter(|t| !stopwords.contains(t))
        .cloned()
        .collect();
    NormalizedQuery {
        original: text.to_owned(),
        tokens,
        tokens_with_stopwords,
    }
}

/// Case- and junk-insensitive identity of a query, stopwords kept. Two
/// queries are "distinct" for clustering purposes iff their keys differ.
pub fn distinct_key(text: &str) -> String {
    tokenize(text).join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GramKind {
    Word(u8),
    OneSkip,
    Char3,
}

impl GramKind {
    pub fn is_word_level(self) -> bool {
        !matches!(self, GramKind::Char3)
    }

    fn prefix(self) -> &'static str {
        match self {
            GramKind::Word(1) => "w1",
            GramKind::Word(2) => "w2",
            GramKind::Word(3) => "w3",
            GramKind::Word(4) => "w4",
            GramKind::Word(_) => unreachable!("word order validated to 1..=4"),
            GramKind::OneSkip => "s1",
            GramKind::Char3 => "c3",
        }
    }

    /// Kind of a namespaced feature id, if it is one.
    pub fn of(feature_id: &str) -> Option<GramKind> {
        let (prefix, _) = feature_id.split_once(':')?;
        Some(match prefix {
            "w1" => GramKind::Word(1),
            "w2" => GramKind::Word(2),
            "w3" => GramKind::Word(3),
            "w4" => GramKind::Word(4),
            "s1" => GramKind::OneSkip,
            "c3" => GramKind::Char3,
            _ => return None,
        })
    }
}

/// Builds the namespaced id of a gram. Tokens never contain `_`, `^` or
/// `$` (normalization strips them), so ids are injective over
/// (kind, gram content).
pub fn feature_id(kind: GramKind, parts: &[&str]) -> String {
    let mut id = String::with_capacity(4 + parts.iter().map(|p| p.len() + 1).sum::<usize>());
    id.push_str(kind.prefix());
    id.push(':');
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            id.push('_');
        }
        id.push_str(p);
    }
    id
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramConfig {
    pub word_orders: BTreeSet<u8>,
    pub one_skip: bool,
    pub char_trigrams: bool,
}

impl Default for NgramConfig {
    /// 1,2,3 word grams (TF-IDF) plus character trigrams (TF).
    fn default() -> Self {
        Self {
            word_orders: [1, 2, 3].into_iter().collect(),
            one_skip: false,
            char_trigrams: true,
        }
    }
}

impl NgramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.word_orders.is_empty() && !self.one_skip && !self.char_trigrams {
            return Err(Error::InvalidInput("n-gram config selects no features".into()));
        }
        if let Some(bad) = self.word_orders.iter().find(|&&k| !(1..=4).contains(&k)) {
            return Err(Error::InvalidInput(format!(
                "word gram order {bad} outside 1..=4"
            )));
        }
        Ok(())
    }
}

/// Sparse map from feature id to a non-negative weight. Zero entries are
/// never stored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SparseFeatureVector {
    entries: BTreeMap<String, f64>,
}

impl SparseFeatureVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, id: String, value: f64) {
        if value == 0.0 {
            return;
        }
        let slot = self.entries.entry(id).or_insert(0.0);
        *slot += value;
    }

    pub fn get(&self, id: &str) -> f64 {
        self.entries.get(id).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Total count over features of one kind.
    pub fn total_of(&self, kind: GramKind) -> f64 {
        self.iter()
            .filter(|(id, _)| GramKind::of(id) == Some(kind))
            .map(|(_, v)| v)
            .sum()
    }
}

impl FromIterator<(String, f64)> for SparseFeatureVector {
    fn from_iter<T: IntoIterator<Item = (String, f64)>>(iter: T) -> Self {
        let mut v = Self::new();
        for (k, x) in iter {
            v.add(k, x);
        }
        v
    }
}

/// Raw term frequencies of every configured gram family.
pub fn extract_ngrams(query: &NormalizedQuery, config: &NgramConfig) -> SparseFeatureVector {
    let tokens: Vec<&str> = query.content_tokens().iter().map(String::as_str).collect();
    let mut out = SparseFeatureVector::new();

    for &order in &config.word_orders {
        let k = order as usize;
        if k == 0 || tokens.len() < k {
            continue;
        }
        for window in tokens.windows(k) {
            out.add(feature_id(GramKind::Word(order), window), 1.0);
        }
    }
    if config.one_skip && tokens.len() >= 3 {
        for i in 0..tokens.len() - 2 {
            out.add(
                feature_id(GramKind::OneSkip, &[tokens[i], tokens[i + 2]]),
                1.0,
            );
        }
    }
    if config.char_trigrams {
        for token in &tokens {
            for tri in char_trigrams(token) {
                out.add(feature_id(GramKind::Char3, &[&tri]), 1.0);
            }
        }
    }
    out
}

/// Trigrams of `^token$`.
pub fn char_trigrams(token: &str) -> Vec<String> {
    let padded: Vec<char> = std::iter::once('^')
        .chain(token.chars())
        .chain(std::iter::once('$'))
        .collect();
    padded.windows(3).map(|w| w.iter().collect()).collect()
}

const IDF_HEADER: &str = "#idf";
const IDF_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    pub document_count: u64,
    pub df: BTreeMap<String, u64>,
}

impl IdfTable {
    /// Document frequencies of word-level grams (word n-grams and skip
    /// grams) over the corpus.
    pub fn fit<'a, I>(corpus: I, config: &NgramConfig) -> Result<Self>
    where
        I: IntoIterator<Item = &'a NormalizedQuery>,
    {
        let mut document_count = 0u64;
        let mut df: BTreeMap<String, u64> = BTreeMap::new();
        for query in corpus {
            document_count += 1;
            for (id, _) in extract_ngrams(query, config).iter() {
                if GramKind::of(id).is_some_and(GramKind::is_word_level) {
                    *df.entry(id.to_owned()).or_insert(0) += 1;
                }
            }
        }
        if document_count == 0 {
            return Err(Error::EmptyCorpus);
        }
        Ok(Self { document_count, df })
    }

    /// Smoothed inverse document frequency, `ln((1 + N) / (1 + df)) + 1`.
    /// Unseen features get `df = 0`.
    pub fn idf(&self, feature: &str) -> f64 {
        let df = self.df.get(feature).copied().unwrap_or(0) as f64;
        ((1.0 + self.document_count as f64) / (1.0 + df)).ln() + 1.0
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "{IDF_HEADER}\t{IDF_FORMAT_VERSION}\t{}",
            self.document_count
        )?;
        for (feature, df) in &self.df {
            writeln!(out, "{feature}\t{df}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse("idf table", "missing header"))?
            .map_err(|e| Error::parse("idf table", e))?;
        let fields: Vec<&str> = header.split('\t').collect();
        if fields.len() != 3 || fields[0] != IDF_HEADER {
            return Err(Error::parse("idf table", "malformed header"));
        }
        let version: u32 = fields[1].parse().map_err(|e| Error::parse("idf header", e))?;
        if version != IDF_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                what: "idf table",
                found: version,
            });
        }
        let document_count: u64 = fields[2].parse().map_err(|e| Error::parse("idf header", e))?;
        if document_count == 0 {
            return Err(Error::EmptyCorpus);
        }
        let mut df = BTreeMap::new();
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::parse("idf table", e))?;
            if line.is_empty() {
                continue;
            }
            let (feature, count) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::parse(format!("idf line {}", n + 2), "missing tab"))?;
            let count: u64 = count
                .parse()
                .map_err(|e| Error::parse(format!("idf line {}", n + 2), e))?;
            if count == 0 || count > document_count {
                return Err(Error::parse(
                    format!("idf line {}", n + 2),
                    format!("df {count} outside 1..={document_count}"),
                ));
            }
            df.insert(feature.to_owned(), count);
        }
        Ok(Self { document_count, df })
    }
}

/// Weights word-level grams by IDF, keeps character grams as raw TF, then
/// L2-normalizes.
pub fn vectorize(counts: &SparseFeatureVector, idf: &IdfTable) -> SparseFeatureVector {
    weight_and_normalize(counts, |id| idf.idf(id))
}

fn weight_and_normalize(
    counts: &SparseFeatureVector,
    idf: impl Fn(&str) -> f64,
) -> SparseFeatureVector {
    let weighted: Vec<(String, f64)> = counts
        .iter()
        .map(|(id, tf)| {
            let w = match GramKind::of(id) {
                Some(kind) if kind.is_word_level() => tf * idf(id),
                _ => tf,
            };
            (id.to_owned(), w)
        })
        .collect();
    let norm = weighted.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if norm == 0.0 {
        return SparseFeatureVector::new();
    }
    weighted.into_iter().map(|(id, w)| (id, w / norm)).collect()
}

/// Human-readable rendering of a vector for debugging and CLI traces.
pub fn describe(v: &SparseFeatureVector) -> String {
    let mut s = String::new();
    for (i, (id, w)) in v.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        let _ = write!(s, "{id}={w:.4}");
    }
    s
}
