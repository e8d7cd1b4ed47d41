//! The runtime flow for one query: analyze, chat-domain score, moderation,
//! specific matching, generic classification, aggregation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aggregator::{aggregate, RulesConfig};
use crate::analyzer::{Analyzer, QueryFeatures};
use crate::chat_domain::{ChatDomainModel, ChatDomainScore};
use crate::error::{Error, Result};
use crate::generic::{assemble_features, GenericFeatureVector, GenericIntentModel};
use crate::intent::{IntentKind, IntentPrediction, MatchType};
use crate::moderation::{LocalModerator, ModerationConfig, ModerationSignal, Moderator};
use crate::specific::SpecificIntentIndex;
use crate::store::{IntentStore, StoreSnapshot};
use crate::text::MAX_QUERY_CHARS;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseIntent {
    pub id: String,
    pub friendly_name: String,
    pub kind: IntentKind,
    pub score: f64,
    pub match_type: MatchType,
}

/// Per-stage scores, returned when the caller asks for a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub normalized: String,
    pub chat_domain: ChatDomainScore,
    pub moderation: ModerationSignal,
    pub specific: Vec<IntentPrediction>,
    pub generic: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnderstandResponse {
    pub schema_version: u32,
    pub store_version: u64,
    pub chat_probability: f64,
    /// Sorted by descending score.
    pub intents: Vec<ResponseIntent>,
    pub safe_for_autogeneration: bool,
    pub applied_rules: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Trace>,
    pub latency_ms: f64,
}

impl UnderstandResponse {
    pub fn top_intent(&self) -> Option<&ResponseIntent> {
        self.intents.first()
    }
}

/// Everything a request needs, immutable once built. Reloads build a new
/// engine and swap it in whole.
#[derive(Debug)]
pub struct Engine {
    analyzer: Analyzer,
    domain: ChatDomainModel,
    generic: GenericIntentModel,
    moderator: Moderator,
    index: SpecificIntentIndex,
    snapshot: StoreSnapshot,
    rules: RulesConfig,
}

impl Engine {
    pub fn new(
        analyzer: Analyzer,
        domain: ChatDomainModel,
        generic: GenericIntentModel,
        moderator: Moderator,
        snapshot: StoreSnapshot,
        rules: RulesConfig,
    ) -> Result<Self> {
        let embeddings = crate::store::EmbeddingCache::compute(&snapshot.content, &analyzer).embeddings;
        Self::with_embeddings(analyzer, domain, generic, moderator, snapshot, &embeddings, rules)
    }

    fn with_embeddings(
        analyzer: Analyzer,
        domain: ChatDomainModel,
        generic: GenericIntentModel,
        moderator: Moderator,
        snapshot: StoreSnapshot,
        embeddings: &[Vec<crate::embeddings::Embedding>],
        rules: RulesConfig,
    ) -> Result<Self> {
        rules.validate()?;
        let provider = analyzer.semantic_provider().name();
        if domain.summary.semantic_provider != provider {
            return Err(Error::InvalidInput(format!(
                "chat-domain model was trained with `{}` embeddings, analyzer provides `{provider}`",
                domain.summary.semantic_provider
            )));
        }
        let c = &snapshot.content;
        let index = SpecificIntentIndex::with_embeddings(
            &c.intents,
            embeddings,
            &c.lists,
            &analyzer,
            c.fuzzy_threshold,
        )?;
        for class in &generic.class_ids {
            if c.intent(class).is_none_or(|i| i.kind != IntentKind::Generic) {
                tracing::warn!(class, version = snapshot.version, "generic class has no generic intent in the store");
            }
        }
        Ok(Self {
            analyzer,
            domain,
            generic,
            moderator,
            index,
            snapshot,
            rules,
        })
    }

    /// Loads models, rules and the newest (or a given) store snapshot.
    pub fn load(config: &EngineConfig) -> Result<Self> {
        let analyzer = Analyzer::default();
        let domain = ChatDomainModel::read(open(&config.domain_model)?)?;
        let generic = GenericIntentModel::read(open(&config.generic_model)?)?;
        let rules = match &config.rules {
            Some(p) => RulesConfig::from_toml_str(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
            None => RulesConfig::default(),
        };
        let store = IntentStore::open(&config.store)?;
        let snapshot = match config.store_version {
            Some(v) => store.load(v)?,
            None => store.load_latest()?,
        };
        let embeddings = store.embeddings(&snapshot, &analyzer);
        let moderator = Moderator::from_config(&config.moderation, LocalModerator::default());
        Self::with_embeddings(analyzer, domain, generic, moderator, snapshot, &embeddings, rules)
    }

    pub fn analyzer(&self) -> &Analyzer {
        &self.analyzer
    }

    pub fn snapshot(&self) -> &StoreSnapshot {
        &self.snapshot
    }

    pub fn store_version(&self) -> u64 {
        self.snapshot.version
    }

    pub fn domain_model(&self) -> &ChatDomainModel {
        &self.domain
    }

    pub fn generic_model(&self) -> &GenericIntentModel {
        &self.generic
    }

    pub fn index(&self) -> &SpecificIntentIndex {
        &self.index
    }

    pub fn rules(&self) -> &RulesConfig {
        &self.rules
    }

    pub fn understand(&self, text: &str, trace: bool) -> Result<UnderstandResponse> {
        let start = Instant::now();
        validate_text(text)?;
        let features = self.analyzer.analyze(text);
        let chat = self.domain.score_features(&features);
        let moderation = self.moderator.moderate(text, &features.normalized)?;
        let specific = self.index.match_specific(&features.normalized, &features.semantic);
        let generic_features = assemble_features(&features.semantic, &features.sentiment, &moderation, &chat)?;
        let generic = self.generic.predict(&generic_features);
        let result = aggregate(&specific, &generic, &moderation, &chat, &self.rules);

        let intents = result
            .intents
            .iter()
            .map(|p| {
                let (friendly_name, kind) = match self.snapshot.content.intent(&p.intent_id) {
                    Some(i) => (i.friendly_name.clone(), i.kind),
                    None if p.match_type == MatchType::GenericModel => (p.intent_id.clone(), IntentKind::Generic),
                    None => (p.intent_id.clone(), IntentKind::Specific),
                };
                ResponseIntent {
                    id: p.intent_id.clone(),
                    friendly_name,
                    kind,
                    score: p.score,
                    match_type: p.match_type,
                }
            })
            .collect();
        let trace = trace.then(|| Trace {
            normalized: features.normalized.key(),
            chat_domain: chat.clone(),
            moderation: moderation.clone(),
            specific: specific.clone(),
            generic: generic.iter().map(|(c, p)| (c.to_owned(), p)).collect(),
        });
        Ok(UnderstandResponse {
            schema_version: SCHEMA_VERSION,
            store_version: self.snapshot.version,
            chat_probability: result.chat_probability,
            intents,
            safe_for_autogeneration: result.safe_for_autogeneration,
            applied_rules: result.applied_rules,
            trace,
            latency_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }
}

pub fn validate_text(text: &str) -> Result<()> {
    if text.trim().is_empty() {
        return Err(Error::InvalidInput("text is empty".into()));
    }
    let n = text.trim().chars().count();
    if n > MAX_QUERY_CHARS {
        return Err(Error::InvalidInput(format!(
            "text is {n} characters, limit is {MAX_QUERY_CHARS}"
        )));
    }
    Ok(())
}

fn open(path: &Path) -> Result<std::io::BufReader<fs::File>> {
    fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Generic-model input for one query: embeddings, moderation and the
/// chat-domain probability.
pub fn generic_features(
    features: &QueryFeatures,
    domain: &ChatDomainModel,
    moderator: &Moderator,
    text: &str,
) -> Result<GenericFeatureVector> {
    let chat = domain.score_features(features);
    let moderation = moderator.moderate(text, &features.normalized)?;
    assemble_features(&features.semantic, &features.sentiment, &moderation, &chat)
}

/// Paths and settings needed to build an [`Engine`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub store: PathBuf,
    /// Pin a snapshot; the newest is used when absent.
    #[serde(default)]
    pub store_version: Option<u64>,
    pub domain_model: PathBuf,
    pub generic_model: PathBuf,
    #[serde(default)]
    pub rules: Option<PathBuf>,
    #[serde(default)]
    pub moderation: ModerationConfig,
}
