//! HTTP/JSON API over [`ics_core::service::Service`].
//!
//! Routes: `POST /sessions`, `POST /sessions/{id}/utterances`,
//! `POST /sessions/{id}/feedback`, `POST /sessions/{id}/close`,
//! `GET /metrics`, `GET /catalog`, `GET /healthz`.

use std::future::Future;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use thiserror::Error;
use tokio::net::TcpListener;

use ics_core::service::wire::{CatalogListing, CloseRequest, ErrorBody, FeedbackAck, Health, OpenRequest, UtteranceRequest};
use ics_core::service::{EventLog, FeedbackRequest, ModelSnapshot, ServeConfig, Service, ServiceError, SystemClock};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("config {path}: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads a TOML serving config.
pub fn load_config(path: &Path) -> Result<ServeConfig, ServerError> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| ServerError::Config { path: path.display().to_string(), message: e.to_string() })
}

/// Loads every artifact named by `config` into a ready service.
pub fn build_service(config: &ServeConfig) -> Result<Arc<Service>, ServerError> {
    config.recommend.validate()?;
    let events = match &config.event_log {
        Some(p) => EventLog::with_file(p)?,
        None => EventLog::in_memory(),
    };
    let service = Service::new(config.recommend.clone(), events, Arc::new(SystemClock))?;
    service.install(ModelSnapshot::load(config)?);
    Ok(Arc::new(service))
}

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self.0 {
            ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ServiceError::Validation(_) => (StatusCode::BAD_REQUEST, "validation"),
            ServiceError::Unavailable => (StatusCode::SERVICE_UNAVAILABLE, "unavailable"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!(error = %self.0, "request failed");
        }
        (status, Json(ErrorBody { error: self.0.to_string(), kind: kind.into() })).into_response()
    }
}

/// Parses a JSON body; an empty body reads as `{}`.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let body: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { body };
    serde_json::from_slice(body).map_err(|e| ApiError(ServiceError::Validation(format!("request body: {e}"))))
}

/// Runs blocking model work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError(ServiceError::Internal(format!("worker failed: {e}"))))?.map_err(ApiError)
}

type AppState = State<Arc<Service>>;

async fn open_session(State(svc): AppState, body: Bytes) -> Result<Response, ApiError> {
    let body: OpenRequest = parse(&body)?;
    let summary = svc.open(body.attributes)?;
    Ok((StatusCode::CREATED, Json(summary)).into_response())
}

async fn utterance(State(svc): AppState, UrlPath(id): UrlPath<String>, body: Bytes) -> Result<Response, ApiError> {
    let body: UtteranceRequest = parse(&body)?;
    let rec = blocking(move || svc.recommend(&id, &body.text)).await?;
    Ok(Json(rec).into_response())
}

async fn feedback(State(svc): AppState, UrlPath(id): UrlPath<String>, body: Bytes) -> Result<Response, ApiError> {
    let req: FeedbackRequest = parse(&body)?;
    svc.feedback(&id, &req)?;
    Ok(Json(FeedbackAck { session_id: id, turn: req.turn, outcome: req.outcome }).into_response())
}

async fn close(State(svc): AppState, UrlPath(id): UrlPath<String>, body: Bytes) -> Result<Response, ApiError> {
    let body: CloseRequest = parse(&body)?;
    Ok(Json(svc.close(&id, body.resolved)?).into_response())
}

async fn metrics(State(svc): AppState) -> Response {
    Json(svc.metrics()).into_response()
}

async fn catalog(State(svc): AppState) -> Result<Response, ApiError> {
    let table = svc.catalog()?;
    Ok(Json(CatalogListing { version: table.version().to_string(), scenarios: table.iter().cloned().collect() }).into_response())
}

async fn healthz(State(svc): AppState) -> Response {
    match svc.catalog() {
        Ok(t) => Json(Health { status: "ok".into(), catalog_version: Some(t.version().to_string()) }).into_response(),
        Err(_) => (StatusCode::SERVICE_UNAVAILABLE, Json(Health { status: "loading".into(), catalog_version: None })).into_response(),
    }
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/sessions", post(open_session))
        .route("/sessions/{id}/utterances", post(utterance))
        .route("/sessions/{id}/feedback", post(feedback))
        .route("/sessions/{id}/close", post(close))
        .route("/metrics", get(metrics))
        .route("/catalog", get(catalog))
        .route("/healthz", get(healthz))
        .with_state(service)
}

/// Serves on an already bound listener until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    service: Arc<Service>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServerError> {
    axum::serve(listener, router(service)).with_graceful_shutdown(shutdown).await?;
    Ok(())
}

/// Binds `config.port` on all interfaces and serves until Ctrl-C.
pub async fn run(config: &ServeConfig) -> Result<(), ServerError> {
    let service = build_service(config)?;
    let listener = TcpListener::bind(SocketAddr::from(([0, 0, 0, 0], config.port))).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    serve(listener, service, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}
