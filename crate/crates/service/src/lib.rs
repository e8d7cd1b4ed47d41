//! HTTP service: `/v1/understand` runs the full query-understanding
//! pipeline against an immutable engine snapshot; `/v1/annotation/*` drives
//! the cluster review workflow. Wire formats are documented under
//! `schema/`.

pub mod api;
pub mod config;
pub mod state;

use std::net::SocketAddr;
use std::sync::Arc;

use chitchat_core::{Error, Result};

pub use api::router;
pub use config::ServiceConfig;
pub use state::AppState;

/// Binds, loads the engine (a failed load leaves the service up and
/// answering 503) and serves until Ctrl-C. `on_bound` receives the actual
/// address, which matters when the configured port is 0.
pub async fn serve(config: ServiceConfig, on_bound: impl FnOnce(SocketAddr)) -> Result<()> {
    let addr = format!("{}:{}", config.bind, config.port);
    let state = AppState::new(config)?;
    if let Err(e) = state.reload().await {
        tracing::error!(error = %e, "initial engine load failed; serving 503 until reloaded");
    }
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|e| Error::InvalidInput(format!("cannot bind {addr}: {e}")))?;
    let local = listener
        .local_addr()
        .map_err(|e| Error::InvalidInput(format!("cannot read bound address: {e}")))?;
    on_bound(local);
    axum::serve(listener, router(Arc::clone(&state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::InvalidInput(format!("server error: {e}")))
}

/// [`serve`] on a fresh multi-threaded runtime.
pub fn run(config: ServiceConfig, on_bound: impl FnOnce(SocketAddr)) -> Result<()> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start runtime: {e}")))?
        .block_on(serve(config, on_bound))
}
