//! HTTP API over the inference engine and intervention sessions.
//!
//! Every response body is JSON. Errors use [`ApiError`]. Work that touches
//! the solver or the embedding provider runs on the blocking pool.

mod dto;
mod error;
mod openapi;
mod routes;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::http::HeaderValue;
use axum::routing::{get, post};
use axum::Router;
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::ServeDir;
use zcbm_core::pipeline::{Engine, PipelineError, SessionStore, DEFAULT_SESSION_TTL};
use zcbm_core::regress::SolverConfig;
use zcbm_core::retrieval::DEFAULT_K;
use zcbm_core::vecstore::Embedder;

pub use dto::*;
pub use error::{ApiError, ErrorCode};
pub use openapi::{openapi_document, ROUTES};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub default_k: usize,
    pub default_solver: SolverConfig,
    pub session_ttl: Duration,
    /// Sessions are written here after every change and restored on start.
    pub snapshot: Option<PathBuf>,
    /// Static bundle served under `/ui`.
    pub ui_dir: Option<PathBuf>,
    /// Allowed CORS origins; empty allows any origin.
    pub cors_origins: Vec<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            default_k: DEFAULT_K,
            default_solver: SolverConfig::default(),
            session_ttl: DEFAULT_SESSION_TTL,
            snapshot: None,
            ui_dir: None,
            cors_origins: Vec::new(),
        }
    }
}

struct Inner {
    engine: Engine,
    store: SessionStore,
    embedder: Option<Arc<dyn Embedder>>,
    config: ServiceConfig,
}

impl Drop for Inner {
    /// A blocking HTTP client may not be dropped on a runtime thread.
    fn drop(&mut self) {
        if let Some(e) = self.embedder.take() {
            if tokio::runtime::Handle::try_current().is_ok() {
                let _ = std::thread::spawn(move || drop(e)).join();
            }
        }
    }
}

/// Shared, read-only engine plus the session store.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(engine: Engine, embedder: Option<Arc<dyn Embedder>>, config: ServiceConfig) -> Result<Self, PipelineError> {
        let mut store = SessionStore::new(config.session_ttl);
        if let Some(path) = &config.snapshot {
            store = store.with_snapshot(path)?;
        }
        Ok(Self {
            inner: Arc::new(Inner {
                engine,
                store,
                embedder,
                config,
            }),
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.inner.engine
    }

    pub fn store(&self) -> &SessionStore {
        &self.inner.store
    }

    pub fn embedder(&self) -> Option<&dyn Embedder> {
        self.inner.embedder.as_deref()
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }
}

fn cors(origins: &[String]) -> CorsLayer {
    let layer = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    if origins.is_empty() {
        return layer.allow_origin(Any);
    }
    let list: Vec<HeaderValue> = origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
    layer.allow_origin(list)
}

pub fn router(state: AppState) -> Router {
    let mut app = Router::new()
        .route("/v1/healthz", get(routes::healthz))
        .route("/v1/infer", post(routes::infer))
        .route("/v1/sessions", post(routes::create_session))
        .route("/v1/sessions/{id}", get(routes::get_session))
        .route("/v1/sessions/{id}/edits", post(routes::edit_session))
        .route("/v1/sessions/{id}/recompute", post(routes::recompute_session))
        .route("/v1/bank/search", get(routes::search_bank));
    if let Some(dir) = &state.config().ui_dir {
        app = app.nest_service("/ui", ServeDir::new(dir).append_index_html_on_directories(true));
    }
    let layer = cors(&state.config().cors_origins);
    app.fallback(routes::not_found).layer(layer).with_state(state)
}

/// Serves until ctrl-c, sweeping expired sessions in the background.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    let sweep_every = (state.config().session_ttl / 2).clamp(Duration::from_millis(100), Duration::from_secs(60));
    let sweeper = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(sweep_every);
        loop {
            tick.tick().await;
            let removed = sweeper.store().sweep();
            if removed > 0 {
                log::info!("expired {removed} sessions");
            }
        }
    });
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
