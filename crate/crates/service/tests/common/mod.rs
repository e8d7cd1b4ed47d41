#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chitchat_core::chat_domain::{train, ChatDomainConfig};
use chitchat_core::dataset::domain_training_set;
use chitchat_core::generic::{train_generic, GenericConfig};
use chitchat_core::intent::{IntentDefinition, IntentKind};
use chitchat_core::mining::{cluster, rank_and_export, AnnotationBatch, MiningConfig, MiningMode};
use chitchat_core::moderation::Moderator;
use chitchat_core::pipeline::generic_features;
use chitchat_core::store::{IntentStore, StoreContent};
use chitchat_core::synth::{self, SynthConfig, SynthCorpus};
use chitchat_core::Analyzer;
use chitchat_service::{router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub config: ServiceConfig,
    pub corpus: SynthCorpus,
    pub content: StoreContent,
}

impl Fixture {
    pub fn store(&self) -> IntentStore {
        IntentStore::open(&self.config.store).unwrap()
    }

    /// Mined specific batch over the synthetic log.
    pub fn batch(&self) -> AnnotationBatch {
        let analyzer = Analyzer::default();
        let points: Vec<_> = self
            .corpus
            .log
            .iter()
            .map(|q| (q.clone(), analyzer.analyze(&q.text).semantic))
            .filter(|(_, e)| !e.is_zero())
            .collect();
        let mut cfg = MiningConfig::for_mode(MiningMode::Specific);
        cfg.min_points = 5;
        rank_and_export(&cluster(&points, &cfg).unwrap(), &cfg)
    }
}

struct Trained {
    corpus: SynthCorpus,
    domain: Vec<u8>,
    generic: Vec<u8>,
}

fn trained() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(|| {
        let corpus = synth::generate(&SynthConfig {
            judged: 300,
            augmented_negatives: 200,
            augmented_positives: 100,
            generic_per_family: 30,
            specific_variants: 8,
            template_variants: 1,
            ..SynthConfig::default()
        });
        let analyzer = Analyzer::default();
        let domain = train(
            &domain_training_set(&corpus.domain).unwrap(),
            &analyzer,
            &ChatDomainConfig::with_seed(5),
        )
        .unwrap();
        let moderator = Moderator::default();
        let data: Vec<_> = corpus
            .generic
            .iter()
            .map(|g| {
                let f = analyzer.analyze(&g.text);
                (generic_features(&f, &domain, &moderator, &g.text).unwrap(), g.class.clone())
            })
            .collect();
        let mut gcfg = GenericConfig::with_seed(5);
        gcfg.train.epochs = 10;
        let generic = train_generic(&data, &gcfg).unwrap();
        let (mut d, mut g) = (Vec::new(), Vec::new());
        domain.write(&mut d).unwrap();
        generic.write(&mut g).unwrap();
        Trained {
            corpus,
            domain: d,
            generic: g,
        }
    })
}

pub fn store_content() -> StoreContent {
    let mut content = trained().corpus.seed_store.clone();
    for id in synth::generic_family_ids() {
        let mut i = IntentDefinition::new(id, IntentKind::Generic);
        i.curated_queries = synth::family_queries(id);
        content.intents.push(i);
    }
    content
}

/// Small models and a one-snapshot store in a fresh directory.
pub fn fixture() -> Fixture {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let domain_path = dir.path().join("domain.json");
    std::fs::write(&domain_path, &t.domain).unwrap();
    let generic_path = dir.path().join("generic.json");
    std::fs::write(&generic_path, &t.generic).unwrap();
    let content = store_content();
    let store_path = dir.path().join("store");
    IntentStore::open(&store_path)
        .unwrap()
        .save(content.clone(), &[], Some(&Analyzer::default()))
        .unwrap();
    Fixture {
        dir,
        config: ServiceConfig::new(store_path, domain_path, generic_path),
        corpus: t.corpus.clone(),
        content,
    }
}

pub async fn loaded_state(config: &ServiceConfig) -> Arc<AppState> {
    let state = AppState::new(config.clone()).unwrap();
    state.reload().await.unwrap();
    state
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

pub async fn understand(app: &Router, text: &str) -> (StatusCode, Value) {
    call(app, "POST", "/v1/understand", Some(serde_json::json!({ "text": text }).to_string())).await
}

pub fn app(state: Arc<AppState>) -> Router {
    router(state)
}
