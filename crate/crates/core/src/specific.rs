//! Runtime matching against specific intents: exact lookup, then anchored
//! patterns, then nearest curated query by cosine.
//!
//! The first stage that produces anything wins; later stages are not run.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use regex::Regex;

use crate::analyzer::Analyzer;
use crate::embeddings::{cosine_with_norms, l2_norm, Embedding, SEMANTIC_DIM};
use crate::error::{Error, Result};
use crate::intent::{sort_predictions, IntentDefinition, IntentKind, IntentPrediction, MatchType};
use crate::text::NormalizedQuery;

pub const DEFAULT_FUZZY_THRESHOLD: f64 = 0.9;

/// Named word lists usable in patterns as `{name}`.
pub type WordLists = BTreeMap<String, Vec<String>>;

struct Curated {
    intent: usize,
    values: Vec<f64>,
    norm: f64,
}

pub struct SpecificIntentIndex {
    intent_ids: Vec<String>,
    exact: HashMap<String, BTreeSet<usize>>,
    patterns: Vec<(usize, Regex)>,
    curated: Vec<Curated>,
    threshold: f64,
}

impl std::fmt::Debug for SpecificIntentIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpecificIntentIndex")
            .field("intents", &self.intent_ids.len())
            .field("patterns", &self.patterns.len())
            .field("curated", &self.curated.len())
            .field("threshold", &self.threshold)
            .finish()
    }
}

/// Expands `{name}` macros and anchors the expression.
pub fn compile_pattern(intent: &str, pattern: &str, lists: &WordLists) -> Result<Regex> {
    let err = |reason: String| Error::Pattern {
        intent: intent.to_owned(),
        pattern: pattern.to_owned(),
        reason,
    };
    let macro_re = Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("static regex");
    let mut missing = None;
    let expanded = macro_re.replace_all(pattern, |caps: &regex::Captures| {
        let name = &caps[1];
        match lists.get(name) {
            Some(words) if !words.is_empty() => {
                let alts: Vec<String> = words.iter().map(|w| regex::escape(w)).collect();
                format!("(?:{})", alts.join("|"))
            }
            _ => {
                missing.get_or_insert_with(|| name.to_owned());
                String::new()
            }
        }
    });
    if let Some(name) = missing {
        return Err(err(format!("unknown or empty word list `{name}`")));
    }
    Regex::new(&format!("^(?:{expanded})$")).map_err(|e| err(e.to_string()))
}

impl SpecificIntentIndex {
    /// Builds the index, embedding curated queries with `analyzer`. Only
    /// specific intents are indexed.
    pub fn build(
        intents: &[IntentDefinition],
        lists: &WordLists,
        analyzer: &Analyzer,
        threshold: f64,
    ) -> Result<Self> {
        let embeddings: Vec<Vec<Embedding>> = intents
            .iter()
            .map(|i| {
                i.curated_queries
                    .iter()
                    .map(|c| analyzer.semantic(&analyzer.normalize(&c.text)))
                    .collect()
            })
            .collect();
        Self::with_embeddings(intents, &embeddings, lists, analyzer, threshold)
    }

    /// As [`build`](Self::build) with curated embeddings supplied per intent
    /// (e.g. from a cache), parallel to each intent's curated queries.
    pub fn with_embeddings(
        intents: &[IntentDefinition],
        embeddings: &[Vec<Embedding>],
        lists: &WordLists,
        analyzer: &Analyzer,
        threshold: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::InvalidInput(format!(
                "fuzzy threshold must be in [0, 1], got {threshold}"
            )));
        }
        if embeddings.len() != intents.len() {
            return Err(Error::DimensionMismatch {
                expected: intents.len(),
                actual: embeddings.len(),
            });
        }
        let mut index = Self {
            intent_ids: Vec::new(),
            exact: HashMap::new(),
            patterns: Vec::new(),
            curated: Vec::new(),
            threshold,
        };
        for (intent, embs) in intents.iter().zip(embeddings) {
            if intent.kind != IntentKind::Specific {
                continue;
            }
            if intent.curated_queries.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "specific intent `{}` has no curated queries",
                    intent.id
                )));
            }
            if embs.len() != intent.curated_queries.len() {
                return Err(Error::DimensionMismatch {
                    expected: intent.curated_queries.len(),
                    actual: embs.len(),
                });
            }
            let k = index.intent_ids.len();
            index.intent_ids.push(intent.id.clone());
            for (c, e) in intent.curated_queries.iter().zip(embs) {
                e.expect_dim(SEMANTIC_DIM)?;
                let key = analyzer.normalize(&c.text).key();
                index.exact.entry(key).or_default().insert(k);
                index.curated.push(Curated {
                    intent: k,
                    norm: l2_norm(e.values()),
                    values: e.values().to_vec(),
                });
            }
            for p in &intent.patterns {
                index.patterns.push((k, compile_pattern(&intent.id, p, lists)?));
            }
        }
        Ok(index)
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn intent_count(&self) -> usize {
        self.intent_ids.len()
    }

    pub fn curated_count(&self) -> usize {
        self.curated.len()
    }

    fn predictions(&self, hits: impl IntoIterator<Item = (usize, f64)>, t: MatchType) -> Vec<IntentPrediction> {
        let mut out: Vec<IntentPrediction> = hits
            .into_iter()
            .map(|(k, s)| IntentPrediction::new(self.intent_ids[k].clone(), s, t))
            .collect();
        sort_predictions(&mut out);
        out
    }

    /// Every intent with a curated query whose normalized form equals the
    /// query's. Usually zero or one.
    pub fn match_exact(&self, q: &NormalizedQuery) -> Vec<IntentPrediction> {
        if q.is_empty() {
            return Vec::new();
        }
        match self.exact.get(&q.key()) {
            Some(ks) => self.predictions(ks.iter().map(|&k| (k, 1.0)), MatchType::Exact),
            None => Vec::new(),
        }
    }

    pub fn match_pattern(&self, q: &NormalizedQuery) -> Vec<IntentPrediction> {
        if q.is_empty() {
            return Vec::new();
        }
        let surface = q.surface();
        let hits: BTreeSet<usize> = self
            .patterns
            .iter()
            .filter(|(_, re)| re.is_match(&surface))
            .map(|(k, _)| *k)
            .collect();
        self.predictions(hits.into_iter().map(|k| (k, 1.0)), MatchType::Pattern)
    }

    /// Per intent, the best cosine between the query and any of its
    /// curated queries. Indexed like the intents.
    pub fn fuzzy_scores(&self, q: &Embedding) -> Vec<f64> {
        let mut best = vec![0.0f64; self.intent_ids.len()];
        let qn = q.norm();
        if qn == 0.0 || q.dim() != SEMANTIC_DIM {
            return best;
        }
        for c in &self.curated {
            let s = cosine_with_norms(q.values(), qn, &c.values, c.norm);
            if s > best[c.intent] {
                best[c.intent] = s;
            }
        }
        best
    }

    pub fn match_fuzzy(&self, q: &Embedding, threshold: f64) -> Vec<IntentPrediction> {
        let scores = self.fuzzy_scores(q);
        self.predictions(
            scores.into_iter().enumerate().filter(|(_, s)| *s >= threshold),
            MatchType::Fuzzy,
        )
    }

    /// Exact, else pattern, else fuzzy at the index threshold.
    pub fn match_specific(&self, q: &NormalizedQuery, embedding: &Embedding) -> Vec<IntentPrediction> {
        let exact = self.match_exact(q);
        if !exact.is_empty() {
            return exact;
        }
        let pattern = self.match_pattern(q);
        if !pattern.is_empty() {
            return pattern;
        }
        self.match_fuzzy(embedding, self.threshold)
    }

    /// Score of one intent by id, for diagnostics.
    pub fn fuzzy_score_of(&self, q: &Embedding, intent_id: &str) -> Option<f64> {
        let k = self.intent_ids.iter().position(|i| i == intent_id)?;
        Some(self.fuzzy_scores(q)[k])
    }
}
