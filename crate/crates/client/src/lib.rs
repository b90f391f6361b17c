//! Typed client for the recommendation service's HTTP API.

use ics_core::matcher::Attributes;
use ics_core::service::wire::{CatalogListing, CloseRequest, ErrorBody, FeedbackAck, Health, OpenRequest, UtteranceRequest};
use ics_core::service::{FeedbackRequest, MetricsSnapshot, Outcome, Recommendation, SessionState, SessionSummary};
use ics_core::ScenarioId;
use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    /// The server answered with a non-2xx status.
    #[error("{status} ({kind}): {message}")]
    Api { status: StatusCode, kind: String, message: String },
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            Self::Api { status, .. } => Some(*status),
            Self::Transport(e) => e.status(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base_url` like `http://127.0.0.1:8080`; a trailing slash is ignored.
    pub fn new(base_url: &str) -> Self {
        Self { base: base_url.trim_end_matches('/').to_string(), http: reqwest::Client::new() }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn call<B: Serialize, T: DeserializeOwned>(&self, method: Method, path: &str, body: Option<&B>) -> Result<T, ClientError> {
        let mut req = self.http.request(method, format!("{}{path}", self.base));
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await?;
        Err(match serde_json::from_str::<ErrorBody>(&text) {
            Ok(e) => ClientError::Api { status, kind: e.kind, message: e.error },
            Err(_) => ClientError::Api { status, kind: "unknown".into(), message: text },
        })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        self.call::<(), T>(Method::GET, path, None).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        self.call(Method::POST, path, Some(body)).await
    }

    /// Health probe; a server still loading models answers 503, which is
    /// returned as `Ok` with `status == "loading"`.
    pub async fn health(&self) -> Result<Health, ClientError> {
        let resp = self.http.get(format!("{}/healthz", self.base)).send().await?;
        Ok(resp.json().await?)
    }

    pub async fn open_session(&self, attributes: Option<Attributes>) -> Result<SessionSummary, ClientError> {
        self.post("/sessions", &OpenRequest { attributes }).await
    }

    pub async fn utterance(&self, session_id: &str, text: &str) -> Result<Recommendation, ClientError> {
        self.post(&format!("/sessions/{session_id}/utterances"), &UtteranceRequest { text: text.into() }).await
    }

    pub async fn feedback(
        &self,
        session_id: &str,
        turn: usize,
        outcome: Outcome,
        scenario_id: Option<ScenarioId>,
    ) -> Result<FeedbackAck, ClientError> {
        self.post(&format!("/sessions/{session_id}/feedback"), &FeedbackRequest { turn, outcome, scenario_id }).await
    }

    pub async fn close_session(&self, session_id: &str, resolved: bool) -> Result<SessionState, ClientError> {
        self.post(&format!("/sessions/{session_id}/close"), &CloseRequest { resolved }).await
    }

    pub async fn metrics(&self) -> Result<MetricsSnapshot, ClientError> {
        self.get("/metrics").await
    }

    pub async fn catalog(&self) -> Result<CatalogListing, ClientError> {
        self.get("/catalog").await
    }
}
