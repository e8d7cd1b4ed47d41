//! Dense query embeddings behind a pluggable provider interface.
//!
//! The default semantic provider is a signed feature-hashing projection of
//! word uni/bigrams and character trigrams into 300 dimensions. The default
//! sentiment provider hashes the same grams into 120 dimensions and reserves
//! a 30-dimension band for a signed lexicon score, so that polarity flips
//! ("i love you" / "i hate you") move the vector measurably. Users with real
//! models can load precomputed vectors from a lookup file.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{self, GramKind, NgramConfig, NormalizedQuery};

pub const SEMANTIC_DIM: usize = 300;
pub const SENTIMENT_DIM: usize = 150;

const SENTIMENT_BAND: usize = 30;
const SENTIMENT_GAIN: f64 = 2.0;
const CHAR_GRAM_WEIGHT: f64 = 0.5;

const POSITIVE_TERMS: &str = include_str!("../assets/sentiment_positive.txt");
const NEGATIVE_TERMS: &str = include_str!("../assets/sentiment_negative.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "embedding contains non-finite value {bad}"
            )));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn expect_dim(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: self.dim(),
            });
        }
        Ok(())
    }

    /// Unit-length copy; the zero vector stays zero.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            return self.clone();
        }
        Self {
            values: self.values.iter().map(|v| v / n).collect(),
        }
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `<a,b> / (|a| |b|)`, zero when either norm is zero.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(cosine_with_norms(a.values(), a.norm(), b.values(), b.norm()))
}

/// Cosine with precomputed norms. Identical nonzero vectors score exactly
/// 1.0; rounding in the dot product is not allowed to pull them below.
pub(crate) fn cosine_with_norms(a: &[f64], norm_a: f64, b: &[f64], norm_b: f64) -> f64 {
    if norm_a == 0.0 || norm_b == 0.0 {
        return 0.0;
    }
    let c = dot(a, b) / (norm_a * norm_b);
    if c > 1.0 - 1e-9 && a == b {
        return 1.0;
    }
    c.clamp(-1.0, 1.0)
}

pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn deterministic(&self) -> bool {
        true
    }

    fn embed(&self, query: &NormalizedQuery) -> Embedding;
}

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `DefaultHasher`.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn projection_grams() -> NgramConfig {
    NgramConfig {
        word_orders: BTreeSet::from([1, 2]),
        one_skip: false,
        char_trigrams: true,
    }
}

/// Adds the signed hashed projection of the query's grams into `out`.
fn project_grams(query: &NormalizedQuery, grams: &NgramConfig, salt: &str, out: &mut [f64]) {
    let dim = out.len() as u64;
    for (id, count) in text::extract_ngrams(query, grams).iter() {
        let weight = match GramKind::of(id) {
            Some(GramKind::Char3) => CHAR_GRAM_WEIGHT,
            _ => 1.0,
        };
        let mut h = fnv1a(salt.as_bytes());
        for &b in id.as_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        let bucket = (h % dim) as usize;
        let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
        out[bucket] += sign * weight * count;
    }
}

fn unit_or_zero(mut values: Vec<f64>) -> Embedding {
    let n = l2_norm(&values);
    if n > 0.0 {
        for v in &mut values {
            *v /= n;
        }
    }
    Embedding { values }
}

/// Feature-hashing stand-in for a sentence-level semantic model.
#[derive(Debug, Clone)]
pub struct HashingProvider {
    name: String,
    dim: usize,
    grams: NgramConfig,
}

impl HashingProvider {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            name: format!("hashing-semantic-{dim}"),
            dim,
            grams: projection_grams(),
        }
    }

    pub fn semantic() -> Self {
        Self::new(SEMANTIC_DIM)
    }
}

impl EmbeddingProvider for HashingProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, query: &NormalizedQuery) -> Embedding {
        let mut values = vec![0.0; self.dim];
        project_grams(query, &self.grams, "sem", &mut values);
        unit_or_zero(values)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SentimentLexicon {
    positive: HashSet<String>,
    negative: HashSet<String>,
}

impl SentimentLexicon {
    pub fn bundled() -> Self {
        Self::from_lists(POSITIVE_TERMS, NEGATIVE_TERMS)
    }

    pub fn from_lists(positive: &str, negative: &str) -> Self {
        Self {
            positive: text::read_term_list(positive).into_iter().collect(),
            negative: text::read_term_list(negative).into_iter().collect(),
        }
    }

    /// Signed count of polar tokens in the unfiltered token list.
    pub fn polarity(&self, query: &NormalizedQuery) -> f64 {
        query
            .tokens_with_stopwords
            .iter()
            .map(|t| {
                if self.positive.contains(t) {
                    1.0
                } else if self.negative.contains(t) {
                    -1.0
                } else {
                    0.0
                }
            })
            .sum()
    }
}

/// Hashed projection plus a dedicated lexicon band.
#[derive(Debug, Clone)]
pub struct SentimentProvider {
    lexicon: SentimentLexicon,
    grams: NgramConfig,
}

impl SentimentProvider {
    pub fn new(lexicon: SentimentLexicon) -> Self {
        Self {
            lexicon,
            grams: projection_grams(),
        }
    }
}

impl Default for SentimentProvider {
    fn default() -> Self {
        Self::new(SentimentLexicon::bundled())
    }
}

impl EmbeddingProvider for SentimentProvider {
    fn name(&self) -> &str {
        "hashing-sentiment-150"
    }

    fn dim(&self) -> usize {
        SENTIMENT_DIM
    }

    fn embed(&self, query: &NormalizedQuery) -> Embedding {
        let mut values = vec![0.0; SENTIMENT_DIM];
        let (hashed, band) = values.split_at_mut(SENTIMENT_DIM - SENTIMENT_BAND);
        project_grams(query, &self.grams, "sent", hashed);
        let level = self.lexicon.polarity(query) * SENTIMENT_GAIN / (SENTIMENT_BAND as f64).sqrt();
        band.fill(level);
        unit_or_zero(values)
    }
}

const PRECOMPUTED_HEADER: &str = "#embeddings";
const PRECOMPUTED_VERSION: u32 = 1;

/// Exact-match lookup of precomputed vectors keyed by normalized text,
/// falling back to another provider for unseen queries.
pub struct PrecomputedProvider {
    name: String,
    dim: usize,
    fallback_name: String,
    table: HashMap<String, Embedding>,
    fallback: Arc<dyn EmbeddingProvider>,
}

impl std::fmt::Debug for PrecomputedProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PrecomputedProvider")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("entries", &self.table.len())
            .field("fallback", &self.fallback_name)
            .finish()
    }
}

impl PrecomputedProvider {
    /// Reads the record file:
    ///
    /// ```text
    /// #embeddings<TAB>1<TAB><dim><TAB><fallback provider name>
    /// <query text><TAB><dim><TAB><v1> <v2> ...
    /// ```
    ///
    /// The fallback must match the declared name and dimension.
    pub fn read<R: BufRead>(input: R, fallback: Arc<dyn EmbeddingProvider>) -> Result<Self> {
        let ctx = "embedding file";
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(ctx, "missing header"))?
            .map_err(|e| Error::parse(ctx, e))?;
        let fields: Vec<&str> = header.split('\t').collect();
        if fields.len() != 4 || fields[0] != PRECOMPUTED_HEADER {
            return Err(Error::parse(ctx, "malformed header"));
        }
        let version: u32 = fields[1].parse().map_err(|e| Error::parse(ctx, e))?;
        if version != PRECOMPUTED_VERSION {
            return Err(Error::FormatVersion {
                what: "embedding file",
                found: version,
            });
        }
        let dim: usize = fields[2].parse().map_err(|e| Error::parse(ctx, e))?;
        let fallback_name = fields[3].to_owned();
        if fallback.name() != fallback_name {
            return Err(Error::InvalidInput(format!(
                "embedding file declares fallback `{fallback_name}`, got `{}`",
                fallback.name()
            )));
        }
        if fallback.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: fallback.dim(),
            });
        }

        let mut table = HashMap::new();
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::parse(ctx, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let lctx = || format!("embedding file line {}", n + 2);
            let mut parts = line.splitn(3, '\t');
            let (Some(text), Some(d), Some(vals)) = (parts.next(), parts.next(), parts.next())
            else {
                return Err(Error::parse(lctx(), "expected text, dim, values"));
            };
            let d: usize = d.parse().map_err(|e| Error::parse(lctx(), e))?;
            let values = vals
                .split_ascii_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(lctx(), e))?;
            for actual in [d, values.len()] {
                if actual != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        actual,
                    });
                }
            }
            table.insert(text::distinct_key(text), Embedding::new(values)?);
        }
        Ok(Self {
            name: format!("precomputed-{dim}"),
            dim,
            fallback_name,
            table,
            fallback,
        })
    }

    pub fn write<W: Write>(
        mut out: W,
        dim: usize,
        fallback_name: &str,
        records: &[(String, Embedding)],
    ) -> Result<()> {
        let io = |e| Error::parse("embedding file", e);
        writeln!(out, "{PRECOMPUTED_HEADER}\t{PRECOMPUTED_VERSION}\t{dim}\t{fallback_name}")
            .map_err(io)?;
        for (text, e) in records {
            e.expect_dim(dim)?;
            let vals: Vec<String> = e.values().iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{text}\t{dim}\t{}", vals.join(" ")).map_err(io)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl EmbeddingProvider for PrecomputedProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn deterministic(&self) -> bool {
        self.fallback.deterministic()
    }

    fn embed(&self, query: &NormalizedQuery) -> Embedding {
        match self.table.get(&query.surface()) {
            Some(e) => e.clone(),
            None => self.fallback.embed(query),
        }
    }
}
