//! Adult and offensive content scoring.
//!
//! An external moderation service is used when configured; otherwise (or
//! when it fails under the fallback policy) a local lexicon scorer produces
//! `1 - exp(-hits)` per category.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{read_term_list, tokenize, NormalizedQuery};

const BUNDLED_ADULT: &str = include_str!("../assets/moderation_adult.txt");
const BUNDLED_OFFENSIVE: &str = include_str!("../assets/moderation_offensive.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModerationSource {
    External,
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModerationSignal {
    pub adult_score: f64,
    pub offensive_score: f64,
    pub source: ModerationSource,
}

impl ModerationSignal {
    pub fn max_score(&self) -> f64 {
        self.adult_score.max(self.offensive_score)
    }
}

/// `1 - exp(-hits)`.
pub fn hit_score(hits: usize) -> f64 {
    1.0 - (-(hits as f64)).exp()
}

/// A term list; multi-word terms are stored as token sequences.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    terms: Vec<Vec<String>>,
}

impl Lexicon {
    pub fn parse(text: &str) -> Self {
        let mut terms: Vec<Vec<String>> = read_term_list(text)
            .iter()
            .map(|t| tokenize(t))
            .filter(|t| !t.is_empty())
            .collect();
        terms.sort();
        terms.dedup();
        Self { terms }
    }

    pub fn load(path: &Path) -> Result<Self> {
        std::fs::read_to_string(path)
            .map(|t| Self::parse(&t))
            .map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Occurrences of any term in `tokens`. Overlapping matches of
    /// different terms all count.
    pub fn hits(&self, tokens: &[String]) -> usize {
        self.terms
            .iter()
            .map(|term| tokens.windows(term.len()).filter(|w| *w == term.as_slice()).count())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalModerator {
    pub adult: Lexicon,
    pub offensive: Lexicon,
}

impl Default for LocalModerator {
    fn default() -> Self {
        Self {
            adult: Lexicon::parse(BUNDLED_ADULT),
            offensive: Lexicon::parse(BUNDLED_OFFENSIVE),
        }
    }
}

impl LocalModerator {
    pub fn score(&self, q: &NormalizedQuery) -> ModerationSignal {
        let tokens = &q.tokens_with_stopwords;
        ModerationSignal {
            adult_score: hit_score(self.adult.hits(tokens)),
            offensive_score: hit_score(self.offensive.hits(tokens)),
            source: ModerationSource::Local,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    #[default]
    Fallback,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModerationConfig {
    /// External endpoint; `None` means local scoring only.
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the bearer credential.
    pub credential_env: Option<String>,
    pub timeout_ms: u64,
    pub policy: FailurePolicy,
}

impl Default for ModerationConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            credential_env: None,
            timeout_ms: 200,
            policy: FailurePolicy::Fallback,
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    adult: f64,
    offensive: f64,
}

/// Client for a JSON moderation service: `POST {"text": ...}` answered by
/// `{"adult": p, "offensive": p}`.
#[derive(Debug, Clone)]
pub struct ExternalModerator {
    endpoint: String,
    credential: Option<String>,
    agent: ureq::Agent,
}

impl ExternalModerator {
    pub fn new(endpoint: impl Into<String>, credential: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            credential,
            agent,
        }
    }

    pub fn score(&self, text: &str) -> Result<ModerationSignal> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(c) = &self.credential {
            req = req.header("Authorization", format!("Bearer {c}"));
        }
        let reply: WireResponse = req
            .send_json(WireRequest { text })
            .and_then(|r| r.into_body().read_json())
            .map_err(|e| Error::Moderation(e.to_string()))?;
        let clamp = |v: f64| {
            if v.is_finite() {
                Ok(v.clamp(0.0, 1.0))
            } else {
                Err(Error::Moderation(format!("non-finite score {v}")))
            }
        };
        Ok(ModerationSignal {
            adult_score: clamp(reply.adult)?,
            offensive_score: clamp(reply.offensive)?,
            source: ModerationSource::External,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct Moderator {
    local: LocalModerator,
    external: Option<ExternalModerator>,
    policy: FailurePolicy,
}

impl Moderator {
    pub fn local(local: LocalModerator) -> Self {
        Self {
            local,
            external: None,
            policy: FailurePolicy::Fallback,
        }
    }

    /// Reads the credential from the configured environment variable.
    pub fn from_config(config: &ModerationConfig, local: LocalModerator) -> Self {
        let external = config.endpoint.as_ref().map(|url| {
            let credential = config
                .credential_env
                .as_ref()
                .and_then(|var| std::env::var(var).ok());
            ExternalModerator::new(url, credential, Duration::from_millis(config.timeout_ms))
        });
        Self {
            local,
            external,
            policy: config.policy,
        }
    }

    pub fn has_external(&self) -> bool {
        self.external.is_some()
    }

    pub fn moderate(&self, text: &str, q: &NormalizedQuery) -> Result<ModerationSignal> {
        let Some(ext) = &self.external else {
            return Ok(self.local.score(q));
        };
        match ext.score(text) {
            Ok(s) => Ok(s),
            Err(e) => match self.policy {
                FailurePolicy::Fail => Err(e),
                FailurePolicy::Fallback => {
                    tracing::warn!(error = %e, "moderation service failed, using local lexicon");
                    Ok(self.local.score(q))
                }
            },
        }
    }
}
