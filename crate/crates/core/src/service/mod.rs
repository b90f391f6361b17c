//! Runtime recommendation loop: per-session scenario recognition, the
//! scenario-solution table, staff feedback and business metrics.

mod engine;
mod events;
mod replay;
mod session;
mod table;
pub mod wire;

pub use engine::{ModelSnapshot, Recognition, ScoringModel};
pub(crate) use events::percentile;
pub use events::{Event, EventKind, EventLog, MetricsSnapshot};
pub use replay::{replay_evaluate, ReplayReport, ScenarioRecall};
pub use session::{FeedbackRequest, Outcome, Recommendation, RecommendedItem, Service, SessionState, SessionSummary, TurnRecord};
pub use table::{CatalogError, ScenarioEntry, ScenarioSolutionTable};

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coarse::CoarseError;
use crate::matcher::MatcherError;
use crate::text::TextError;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error("invalid request: {0}")]
    Validation(String),
    #[error("models are not loaded")]
    Unavailable,
    #[error(transparent)]
    Model(#[from] MatcherError),
    #[error(transparent)]
    Coarse(#[from] CoarseError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Internal(String),
}

/// Serving knobs that do not depend on the loaded models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecommendConfig {
    /// Coarse candidates passed to the fine model.
    pub k: usize,
    /// Minimum fine score for a scenario to be shown.
    pub threshold: f64,
    pub max_shown: usize,
    /// Number of most recent utterances scored together; 1 scores the
    /// latest utterance only.
    pub context_turns: usize,
}

impl Default for RecommendConfig {
    fn default() -> Self {
        Self { k: 50, threshold: 0.5, max_shown: 3, context_turns: 1 }
    }
}

impl RecommendConfig {
    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.k == 0 || self.max_shown == 0 || self.context_turns == 0 {
            return Err(ServiceError::Validation("k, max_shown and context_turns must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(ServiceError::Validation(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }
}

/// Files and settings for a serving process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServeConfig {
    #[serde(default = "default_port")]
    pub port: u16,
    pub catalog: PathBuf,
    pub word_vectors: PathBuf,
    pub tfidf: PathBuf,
    pub student: PathBuf,
    #[serde(default)]
    pub hybrid: Option<PathBuf>,
    /// Append-only JSON-lines event log.
    #[serde(default)]
    pub event_log: Option<PathBuf>,
    #[serde(flatten)]
    pub recommend: RecommendConfig,
}

fn default_port() -> u16 {
    8080
}

/// Wall-clock source in seconds, injectable for tests.
pub trait Clock: Send + Sync {
    fn now(&self) -> f64;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> f64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
    }
}

/// Clock that only moves when told to; shares its time across clones.
#[derive(Clone, Debug, Default)]
pub struct ManualClock {
    micros: Arc<AtomicU64>,
}

impl ManualClock {
    pub fn new(start: f64) -> Self {
        let c = Self::default();
        c.set(start);
        c
    }

    pub fn set(&self, seconds: f64) {
        self.micros.store((seconds * 1e6).round() as u64, Ordering::SeqCst);
    }

    pub fn advance(&self, seconds: f64) {
        self.micros.fetch_add((seconds * 1e6).round() as u64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> f64 {
        self.micros.load(Ordering::SeqCst) as f64 / 1e6
    }
}
