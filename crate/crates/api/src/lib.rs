//! HTTP service for practice sessions: case catalog, session lifecycle,
//! turn submission with audio, event streaming and artifact retrieval.

mod audio;
pub mod catalog;
pub mod error;
pub mod events;
mod idempotency;
mod routes;

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Request, State};
use axum::http::header;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use candor_core::config::{Config, LoadError};
use candor_core::orchestrator::Orchestrator;
use candor_core::provider::{ConfigError, ProviderFactory};
use candor_core::session::SessionOptions;
use candor_core::store::{SessionStore, StoreError};
use thiserror::Error;
use tokio::sync::Semaphore;

pub use catalog::{CaseCatalog, CaseSummary};
pub use error::{ApiError, ErrorBody, RETRY_AFTER_SECS};
pub use events::{event_for, ApiEvent, EventHub, EventKind};
pub use idempotency::{HEADER as IDEMPOTENCY_HEADER, REPLAY_HEADER};

#[derive(Debug, Clone)]
pub struct Settings {
    pub defaults: SessionOptions,
    pub max_upload_bytes: usize,
    pub max_concurrent_turns: usize,
    pub bearer_token: Option<String>,
}

impl Settings {
    pub fn from_config(c: &Config) -> Self {
        Settings {
            defaults: c.session.clone(),
            max_upload_bytes: c.max_upload_bytes,
            max_concurrent_turns: c.max_concurrent_turns,
            bearer_token: c.bearer_token(),
        }
    }
}

impl Default for Settings {
    fn default() -> Self {
        Settings::from_config(&Config::default())
    }
}

pub struct AppState {
    orch: Arc<Orchestrator>,
    hub: Arc<EventHub>,
    catalog: CaseCatalog,
    settings: Settings,
    permits: Arc<Semaphore>,
    idempotency: idempotency::IdempotencyCache,
}

impl AppState {
    pub fn new(orch: Orchestrator, catalog: CaseCatalog, settings: Settings) -> Arc<Self> {
        let hub = Arc::new(EventHub::default());
        orch.add_listener(hub.clone());
        Arc::new(AppState {
            orch: Arc::new(orch),
            hub,
            catalog,
            permits: Arc::new(Semaphore::new(settings.max_concurrent_turns.max(1))),
            settings,
            idempotency: Default::default(),
        })
    }

    pub fn orchestrator(&self) -> &Orchestrator {
        &self.orch
    }

    pub fn catalog(&self) -> &CaseCatalog {
        &self.catalog
    }
}

#[derive(Debug, Error)]
pub enum StartError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Provider(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// State for `config`, using `factory` when given instead of the
/// configured providers.
pub fn state_from_config(config: &Config, factory: Option<Arc<dyn ProviderFactory>>) -> Result<Arc<AppState>, StartError> {
    let factory = match factory {
        Some(f) => f,
        None => config.provider.build()?,
    };
    let store = SessionStore::open(&config.data_dir)?;
    let orch = Orchestrator::new(store, factory)
        .with_templates(config.templates()?)
        .with_stopwords(config.stopwords()?);
    let library = config.cases_dir.is_dir().then_some(config.cases_dir.as_path());
    let catalog = CaseCatalog::load(library, bespoke_dir(config))?;
    Ok(AppState::new(orch, catalog, Settings::from_config(config)))
}

fn bespoke_dir(config: &Config) -> PathBuf {
    config.data_dir.join("cases")
}

async fn auth(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    let Some(token) = &state.settings.bearer_token else {
        return next.run(req).await;
    };
    let header_ok = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .is_some_and(|t| t == token);
    // Browsers cannot set headers on event streams.
    let query_ok = req
        .uri()
        .query()
        .into_iter()
        .flat_map(|q| q.split('&'))
        .any(|kv| kv.strip_prefix("access_token=") == Some(token.as_str()));
    if header_ok || query_ok {
        next.run(req).await
    } else {
        ApiError::new(axum::http::StatusCode::UNAUTHORIZED, "Unauthorized", "missing or wrong bearer token").into_response()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    // Multipart framing needs some room beyond the audio itself.
    let body_limit = state.settings.max_upload_bytes + 64 * 1024;
    Router::new()
        .route("/cases", get(routes::list_cases).post(routes::create_case))
        .route("/cases/{id}", get(routes::get_case))
        .route("/sessions", post(routes::create_session))
        .route("/sessions/{id}", get(routes::get_session))
        .route("/sessions/{id}/turns", post(routes::submit_turn))
        .route("/sessions/{id}/feedback", get(routes::get_feedback))
        .route("/sessions/{id}/end", post(routes::end_session))
        .route("/sessions/{id}/events", get(routes::events))
        .route("/audio/{blob}", get(routes::get_audio))
        .layer(middleware::from_fn_with_state(state.clone(), idempotency::middleware))
        .layer(middleware::from_fn_with_state(state.clone(), auth))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state)
}

/// Binds `config.bind` and serves until the process is stopped.
pub async fn serve(config: &Config) -> Result<(), StartError> {
    let state = tokio::task::block_in_place(|| state_from_config(config, None))?;
    let listener = tokio::net::TcpListener::bind(&config.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await?;
    Ok(())
}
