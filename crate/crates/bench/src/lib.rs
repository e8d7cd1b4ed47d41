//! Shared fixtures for the benchmarks.

use chitchat_core::chat_domain::{train, ChatDomainConfig, ChatDomainModel};
use chitchat_core::dataset::domain_training_set;
use chitchat_core::embeddings::Embedding;
use chitchat_core::generic::{train_generic, GenericConfig, GenericFeatureVector};
use chitchat_core::intent::{IntentDefinition, IntentKind};
use chitchat_core::moderation::Moderator;
use chitchat_core::pipeline::{generic_features, Engine};
use chitchat_core::store::{IntentStore, StoreContent};
use chitchat_core::synth::{self, SynthConfig, SynthCorpus};
use chitchat_core::text::RawQuery;
use chitchat_core::Analyzer;
use chitchat_core::aggregator::RulesConfig;

pub fn corpus() -> SynthCorpus {
    synth::generate(&SynthConfig {
        judged: 300,
        augmented_negatives: 200,
        augmented_positives: 100,
        generic_per_family: 30,
        ..SynthConfig::default()
    })
}

pub fn domain_model(corpus: &SynthCorpus) -> ChatDomainModel {
    let examples = domain_training_set(&corpus.domain).expect("domain data");
    train(&examples, &Analyzer::default(), &ChatDomainConfig::with_seed(1)).expect("domain model")
}

pub fn generic_data(corpus: &SynthCorpus, domain: &ChatDomainModel) -> Vec<(GenericFeatureVector, String)> {
    let (analyzer, moderator) = (Analyzer::default(), Moderator::default());
    corpus
        .generic
        .iter()
        .map(|g| {
            let f = analyzer.analyze(&g.text);
            (generic_features(&f, domain, &moderator, &g.text).expect("features"), g.class.clone())
        })
        .collect()
}

pub fn store_content(corpus: &SynthCorpus) -> StoreContent {
    let mut content = corpus.seed_store.clone();
    for id in synth::generic_family_ids() {
        let mut i = IntentDefinition::new(id, IntentKind::Generic);
        i.curated_queries = synth::family_queries(id);
        content.intents.push(i);
    }
    content
}

/// An engine over small trained models and the seed store.
pub fn engine() -> Engine {
    let corpus = corpus();
    let domain = domain_model(&corpus);
    let mut cfg = GenericConfig::with_seed(1);
    cfg.train.epochs = 5;
    let generic = train_generic(&generic_data(&corpus, &domain), &cfg).expect("generic model");
    let dir = tempfile::tempdir().expect("tempdir");
    let store = IntentStore::open(dir.path()).expect("store");
    let snapshot = store.save(store_content(&corpus), &[], None).expect("save");
    Engine::new(Analyzer::default(), domain, generic, Moderator::default(), snapshot, RulesConfig::default())
        .expect("engine")
}

/// The synthetic query log with embeddings, ready for clustering.
pub fn log_points(corpus: &SynthCorpus) -> Vec<(RawQuery, Embedding)> {
    let analyzer = Analyzer::default();
    corpus
        .log
        .iter()
        .map(|q| (q.clone(), analyzer.analyze(&q.text).semantic))
        .filter(|(_, e)| !e.is_zero())
        .collect()
}
