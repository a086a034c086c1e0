//! HTTP service for staged insertion sessions.
//!
//! A session collects an object (and optionally a background), a placement,
//! a prompt and a config, then runs colorize, compose and refine one stage at
//! a time with `k` variants each. Selecting the last variant finalizes the
//! session into an ordinary replayable run directory.

pub mod api;
pub mod config;
pub mod error;
pub mod jobs;
pub mod session;
pub mod store;

use std::sync::Arc;

use axum::Router;

pub use config::ServerConfig;
pub use error::{ApiError, ApiResult};
pub use jobs::{AdapterFactory, JobTicket};
pub use session::{JobStatus, Session, SessionState, Stage};

use jobs::WorkerPool;
use store::Store;

pub struct Inner {
    pub config: ServerConfig,
    pub store: Arc<Store>,
    pool: WorkerPool,
}

#[derive(Clone)]
pub struct AppState {
    pub inner: Arc<Inner>,
}

#[derive(Debug, thiserror::Error)]
pub enum StartError {
    #[error("data directory: {0}")]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Adapter(#[from] insertkit_adapters::AdapterError),
}

impl AppState {
    /// Opens the data directory, fails jobs interrupted by a previous run and
    /// starts the workers.
    pub fn start(config: ServerConfig, factory: AdapterFactory) -> Result<Self, StartError> {
        let store = Arc::new(Store::open(&config.data_dir)?);
        let recovered = jobs::recover(&store)?;
        if recovered > 0 {
            tracing::warn!(jobs = recovered, "marked interrupted jobs as failed");
        }
        let pool = WorkerPool::start(config.workers, store.clone(), config.templates.clone(), &factory)?;
        Ok(Self {
            inner: Arc::new(Inner { config, store, pool }),
        })
    }
}

pub fn router(state: AppState) -> Router {
    api::routes(state)
}

pub async fn serve(state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(state.inner.config.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await
}
