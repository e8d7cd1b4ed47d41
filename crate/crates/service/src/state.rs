use std::sync::{Arc, RwLock};

use chitchat_core::pipeline::Engine;
use chitchat_core::store::IntentStore;
use chitchat_core::{Analyzer, Result};

use crate::config::ServiceConfig;

/// Shared service state. Requests clone the current engine `Arc` and never
/// hold the lock while working, so a reload swaps snapshots atomically.
pub struct AppState {
    config: ServiceConfig,
    engine: RwLock<Option<Arc<Engine>>>,
    store: IntentStore,
    analyzer: Analyzer,
    /// Serializes store writes (decisions, applies) and reloads.
    writer: tokio::sync::Mutex<()>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Result<Arc<Self>> {
        let store = IntentStore::open(&config.store)?;
        Ok(Arc::new(Self {
            config,
            engine: RwLock::new(None),
            store,
            analyzer: Analyzer::default(),
            writer: tokio::sync::Mutex::new(()),
        }))
    }

    /// State with an already built engine; used by tests and embedders.
    pub fn with_engine(config: ServiceConfig, engine: Engine) -> Result<Arc<Self>> {
        let s = Self::new(config)?;
        s.install(engine);
        Ok(s)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn store(&self) -> &IntentStore {
        &self.store
    }

    pub fn analyzer(&self) -> &Analyzer {
        &self.analyzer
    }

    pub fn engine(&self) -> Option<Arc<Engine>> {
        self.engine.read().expect("engine lock").clone()
    }

    pub fn install(&self, engine: Engine) {
        *self.engine.write().expect("engine lock") = Some(Arc::new(engine));
    }

    pub(crate) async fn write_lock(&self) -> tokio::sync::MutexGuard<'_, ()> {
        self.writer.lock().await
    }

    /// Builds a fresh engine from the configured files and swaps it in.
    /// On failure the current engine stays in place.
    pub async fn reload(self: &Arc<Self>) -> Result<u64> {
        let _guard = self.write_lock().await;
        self.reload_locked().await
    }

    pub(crate) async fn reload_locked(self: &Arc<Self>) -> Result<u64> {
        let cfg = self.config.engine_config();
        let engine = tokio::task::spawn_blocking(move || Engine::load(&cfg))
            .await
            .expect("engine load task")?;
        let v = engine.store_version();
        self.install(engine);
        tracing::info!(store_version = v, "engine loaded");
        Ok(v)
    }
}
