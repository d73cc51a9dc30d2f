//! HTTP session service for the trip-planning bias probe.
//!
//! [`config`] reads the TOML service configuration; [`http`] builds the axum
//! router over a [`biasprobe::store::SessionStore`].

pub mod config;
pub mod http;

use std::sync::Arc;

use anyhow::{Context, Result};
use biasprobe::store::FileStore;

pub use config::ServiceConfig;
pub use http::{router, AppState, Settings};

/// Opens the store under `data_dir` and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> Result<()> {
    let study = config.study()?;
    let store = FileStore::open(config.store_path())
        .with_context(|| format!("opening store {}", config.store_path().display()))?;
    let state = Arc::new(AppState::new(study, Arc::new(store), Settings::from_config(&config)?));
    let listener = tokio::net::TcpListener::bind(config.listen)
        .await
        .with_context(|| format!("binding {}", config.listen))?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
