//! HTTP facade over the discovery store and the dead drop.
//!
//! | method | path | body | success |
//! |--------|------|------|---------|
//! | `POST` | `/events` | sanitised event | `201 {"eventId"}`, `200` for a duplicate |
//! | `GET` | `/events?hash=<hex>` | | `200 [events]`, possibly empty |
//! | `POST` | `/dead_drop` | access request | `201 {"requestId"}` |
//! | `GET` | `/dead_drop?hash=<hex>` | | `200 [requests]`, possibly empty |
//! | `DELETE` | `/dead_drop` | | `200 {"removed"}` |
//!
//! Errors are `{"error", "path"?}` with status 400, 409, 413 or 429. No
//! response identifies who submitted an event or who polled.

mod rate_limit;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{middleware, Json, Router};
use chrono::{DateTime, Utc};
use serde::Deserialize;
use serde_json::json;

use discovery_core::dead_drop::{AccessRequest, DeadDrop, DeadDropError};
use discovery_core::ni::Digest;
use discovery_core::sanitiser::SanitisedEvent;
use discovery_core::store::{DiscoveryStore, StoreError};

pub use rate_limit::RateLimit;

pub const MIN_BODY_LIMIT: usize = 64 * 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub journal: Option<PathBuf>,
    pub sweep_interval: Duration,
    pub max_body: usize,
    pub rate_limit: Option<RateLimit>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            journal: None,
            sweep_interval: Duration::from_secs(60),
            max_body: 1024 * 1024,
            rate_limit: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("sweep interval must be positive")]
    ZeroSweepInterval,
    #[error("max body size {0} is below the {MIN_BODY_LIMIT} byte minimum")]
    BodyLimitTooSmall(usize),
    #[error("rate limit needs a positive request count and window")]
    InvalidRateLimit,
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.sweep_interval.is_zero() {
            return Err(ConfigError::ZeroSweepInterval);
        }
        if self.max_body < MIN_BODY_LIMIT {
            return Err(ConfigError::BodyLimitTooSmall(self.max_body));
        }
        if self.rate_limit.is_some_and(|r| r.requests == 0 || r.window.is_zero()) {
            return Err(ConfigError::InvalidRateLimit);
        }
        Ok(())
    }
}

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<DiscoveryStore>,
    pub dead_drop: Arc<DeadDrop>,
    pub clock: Clock,
}

impl AppState {
    pub fn new(store: DiscoveryStore) -> Self {
        Self {
            store: Arc::new(store),
            dead_drop: Arc::new(DeadDrop::new()),
            clock: Arc::new(Utc::now),
        }
    }

    pub fn with_clock(mut self, clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) -> Self {
        self.clock = Arc::new(clock);
        self
    }
}

struct ApiError {
    status: StatusCode,
    message: String,
    path: Option<String>,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
            path: None,
        }
    }

    fn at(mut self, path: impl Into<String>) -> Self {
        let path = path.into();
        self.path = (!path.is_empty()).then_some(path);
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = match self.path {
            Some(path) => json!({"error": self.message, "path": path}),
            None => json!({"error": self.message}),
        };
        (self.status, Json(body)).into_response()
    }
}

fn json_bytes(status: StatusCode, body: Vec<u8>) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

#[derive(Deserialize)]
struct HashQuery {
    hash: Option<String>,
}

fn parse_hash(q: &HashQuery) -> Result<Digest, ApiError> {
    let raw = q
        .hash
        .as_deref()
        .ok_or_else(|| ApiError::bad_request("missing hash parameter").at("hash"))?;
    raw.parse()
        .map_err(|e: discovery_core::ni::HashError| ApiError::bad_request(e.to_string()).at("hash"))
}

async fn post_event(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let event = SanitisedEvent::from_json(&body).map_err(|e| ApiError::bad_request(e.message).at(e.path))?;
    match state.store.put(event) {
        Ok((id, outcome)) => {
            let status = if outcome.inserted { StatusCode::CREATED } else { StatusCode::OK };
            Ok((status, Json(json!({"eventId": id}))).into_response())
        }
        Err(StoreError::Invalid(e)) => Err(ApiError::bad_request(e.message).at(e.path)),
        Err(e @ StoreError::Conflict(_)) => Err(ApiError {
            status: StatusCode::CONFLICT,
            message: e.to_string(),
            path: Some("eventId".into()),
        }),
        Err(e) => {
            tracing::error!("storing event failed: {e}");
            Err(ApiError {
                status: StatusCode::INTERNAL_SERVER_ERROR,
                message: "storage failure".into(),
                path: None,
            })
        }
    }
}

async fn get_events(State(state): State<AppState>, Query(q): Query<HashQuery>) -> Result<Response, ApiError> {
    let digest = parse_hash(&q)?;
    let events = state.store.query_by_digest(&digest);
    Ok(json_bytes(
        StatusCode::OK,
        serde_json::to_vec(&events).expect("events serialise"),
    ))
}

async fn post_request(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let request = AccessRequest::from_json(&body).map_err(|e| match e {
        DeadDropError::Malformed { path, message } => ApiError::bad_request(message).at(path),
        other => ApiError::bad_request(other.to_string()),
    })?;
    let id = state
        .dead_drop
        .post_request(request, (state.clock)())
        .map_err(|e| ApiError::bad_request(e.to_string()).at("valid_until"))?;
    Ok((StatusCode::CREATED, Json(json!({"requestId": id}))).into_response())
}

async fn poll_requests(State(state): State<AppState>, Query(q): Query<HashQuery>) -> Result<Response, ApiError> {
    let digest = parse_hash(&q)?;
    let requests = state.dead_drop.poll_requests(&digest, (state.clock)());
    Ok(json_bytes(
        StatusCode::OK,
        serde_json::to_vec(&requests).expect("requests serialise"),
    ))
}

async fn sweep(State(state): State<AppState>) -> Json<serde_json::Value> {
    let removed = state.dead_drop.expire_sweep((state.clock)());
    Json(json!({"removed": removed}))
}

async fn payload_too_large(res: Response) -> Response {
    if res.status() == StatusCode::PAYLOAD_TOO_LARGE {
        return ApiError {
            status: StatusCode::PAYLOAD_TOO_LARGE,
            message: "request body too large".into(),
            path: None,
        }
        .into_response();
    }
    res
}

pub fn router(state: AppState, max_body: usize, rate_limit: Option<RateLimit>) -> Router {
    let mut app = Router::new()
        .route("/events", post(post_event).get(get_events))
        .route("/dead_drop", post(post_request).get(poll_requests).delete(sweep))
        .with_state(state)
        .layer(middleware::map_response(payload_too_large))
        .layer(DefaultBodyLimit::max(max_body));
    if let Some(limit) = rate_limit {
        let limiter = Arc::new(rate_limit::Limiter::new(limit));
        app = app.layer(middleware::from_fn_with_state(limiter, rate_limit::enforce));
    }
    app
}

/// Opens the journal (if any) and builds the shared state.
pub fn open_state(config: &ServiceConfig) -> Result<AppState, StoreError> {
    let store = match &config.journal {
        Some(path) => DiscoveryStore::open(path)?,
        None => DiscoveryStore::new(),
    };
    Ok(AppState::new(store))
}

/// Removes expired dead-drop requests every `interval`.
pub fn spawn_sweeper(state: AppState, interval: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut ticker = tokio::time::interval(interval);
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            ticker.tick().await;
            let removed = state.dead_drop.expire_sweep((state.clock)());
            if removed > 0 {
                tracing::debug!(removed, "expired dead-drop requests");
            }
        }
    })
}

/// Serves on an already bound listener until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    config: &ServiceConfig,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let sweeper = spawn_sweeper(state.clone(), config.sweep_interval);
    let app = router(state, config.max_body, config.rate_limit);
    let result = axum::serve(listener, app.into_make_service_with_connect_info::<SocketAddr>())
        .with_graceful_shutdown(shutdown)
        .await;
    sweeper.abort();
    result
}

/// A service running on its own thread and runtime. Dropping it stops the server.
pub struct RunningService {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl RunningService {
    /// Starts a server for `config` in the background. Useful for tests and tools.
    pub fn start(config: ServiceConfig) -> anyhow::Result<Self> {
        config.validate()?;
        let state = open_state(&config)?;
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let listener = runtime.block_on(tokio::net::TcpListener::bind(config.bind))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            runtime.block_on(serve(listener, &config, state, async {
                let _ = rx.await;
            }))
        });
        Ok(Self {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) -> std::io::Result<()> {
        self.stop_inner()
    }

    fn stop_inner(&mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for RunningService {
    fn drop(&mut self) {
        let _ = self.stop_inner();
    }
}
