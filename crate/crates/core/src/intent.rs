//! Intent definitions and predictions shared by mining, matching and the
//! store.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentKind {
    Specific,
    Generic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuratedQuery {
    pub text: String,
    #[serde(default = "unit")]
    pub weight: f64,
}

fn unit() -> f64 {
    1.0
}

impl CuratedQuery {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            weight: 1.0,
        }
    }
}

/// Where an intent came from: the mined clusters it was built from and the
/// annotation batch that chose them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_id: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clusters: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentDefinition {
    pub id: String,
    pub friendly_name: String,
    pub kind: IntentKind,
    #[serde(default)]
    pub curated_queries: Vec<CuratedQuery>,
    /// Regular expressions over the normalized text, anchored at both ends.
    /// `{name}` expands to the store's named word list.
    #[serde(default)]
    pub patterns: Vec<String>,
    #[serde(default)]
    pub responses: Vec<String>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl IntentDefinition {
    pub fn new(id: impl Into<String>, kind: IntentKind) -> Self {
        let id = id.into();
        Self {
            friendly_name: id.clone(),
            id,
            kind,
            curated_queries: Vec::new(),
            patterns: Vec::new(),
            responses: Vec::new(),
            provenance: Provenance::default(),
        }
    }

    pub fn with_queries<I, S>(mut self, queries: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.curated_queries
            .extend(queries.into_iter().map(CuratedQuery::new));
        self
    }

    pub fn with_patterns<I, S>(mut self, patterns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.patterns.extend(patterns.into_iter().map(Into::into));
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatchType {
    Exact,
    Pattern,
    Fuzzy,
    GenericModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentPrediction {
    pub intent_id: String,
    pub score: f64,
    pub match_type: MatchType,
}

impl IntentPrediction {
    pub fn new(intent_id: impl Into<String>, score: f64, match_type: MatchType) -> Self {
        Self {
            intent_id: intent_id.into(),
            score,
            match_type,
        }
    }
}

/// Score descending, then intent id.
pub fn sort_predictions(p: &mut [IntentPrediction]) {
    p.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.intent_id.cmp(&b.intent_id))
    });
}
