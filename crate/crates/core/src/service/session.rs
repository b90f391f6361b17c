use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data_prep::{Provenance, TrainingTriplet};
use crate::matcher::Attributes;
use crate::text::tokenize;
use crate::ScenarioId;

use super::engine::{ModelSnapshot, ScoringModel};
use super::events::{accepted_pairs, Event, EventKind, EventLog, MetricsSnapshot};
use super::{Clock, RecommendConfig, ScenarioSolutionTable, ServiceError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Staff used one of the shown scenarios.
    Accepted,
    /// Nothing shown was usable.
    Rejected,
    /// Staff answered from their own experience.
    Manual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub turn: usize,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_id: Option<ScenarioId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommendedItem {
    pub scenario_id: ScenarioId,
    pub score: f64,
    pub description: String,
    pub solution: String,
    pub domain: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub session_id: String,
    pub turn: usize,
    /// Best first; empty when `fallback` is set.
    pub items: Vec<RecommendedItem>,
    /// No scenario cleared the threshold; staff answer on their own.
    pub fallback: bool,
    pub latency_ms: f64,
    pub model: ScoringModel,
    pub catalog_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn: usize,
    pub utterance: String,
    pub recommendation: Recommendation,
    pub feedback: Option<FeedbackRequest>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub opened_at: f64,
    pub last_activity: f64,
    pub attributes: Option<Attributes>,
    pub turns: Vec<TurnRecord>,
    pub closed_at: Option<f64>,
    pub resolved: Option<bool>,
}

impl SessionState {
    pub fn is_closed(&self) -> bool {
        self.closed_at.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub with_aspects: bool,
}

/// Live sessions over a swappable model snapshot.
pub struct Service {
    snapshot: RwLock<Option<Arc<ModelSnapshot>>>,
    config: RecommendConfig,
    sessions: Mutex<HashMap<String, Arc<Mutex<SessionState>>>>,
    events: EventLog,
    clock: Arc<dyn Clock>,
    next_session: AtomicU64,
}

impl std::fmt::Debug for Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Service").field("config", &self.config).field("events", &self.events.len()).finish()
    }
}

fn validation(msg: impl Into<String>) -> ServiceError {
    ServiceError::Validation(msg.into())
}

impl Service {
    pub fn new(config: RecommendConfig, events: EventLog, clock: Arc<dyn Clock>) -> Result<Self, ServiceError> {
        config.validate()?;
        Ok(Self { snapshot: RwLock::new(None), config, sessions: Mutex::default(), events, clock, next_session: AtomicU64::new(1) })
    }

    /// Replaces the model and catalog snapshot; turns already in flight
    /// finish on the snapshot they started with.
    pub fn install(&self, snapshot: ModelSnapshot) {
        self.install_arc(Arc::new(snapshot));
    }

    pub fn install_arc(&self, snapshot: Arc<ModelSnapshot>) {
        *self.snapshot.write().expect("snapshot lock poisoned") = Some(snapshot);
    }

    pub fn snapshot(&self) -> Result<Arc<ModelSnapshot>, ServiceError> {
        self.snapshot.read().expect("snapshot lock poisoned").clone().ok_or(ServiceError::Unavailable)
    }

    pub fn is_ready(&self) -> bool {
        self.snapshot.read().expect("snapshot lock poisoned").is_some()
    }

    pub fn config(&self) -> &RecommendConfig {
        &self.config
    }

    pub fn catalog(&self) -> Result<Arc<ScenarioSolutionTable>, ServiceError> {
        Ok(self.snapshot()?.catalog().clone())
    }

    fn session_handle(&self, id: &str) -> Result<Arc<Mutex<SessionState>>, ServiceError> {
        self.sessions.lock().expect("session map poisoned").get(id).cloned().ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    /// Opens a session; non-empty `attributes` route its turns to the
    /// hybrid model when one is loaded.
    pub fn open(&self, attributes: Option<Attributes>) -> Result<SessionSummary, ServiceError> {
        let attributes = attributes.filter(|a| !a.is_empty());
        if let (Some(a), Ok(snap)) = (&attributes, self.snapshot()) {
            snap.encode_aspects(a)?;
        }
        let id = format!("s{:08}", self.next_session.fetch_add(1, Ordering::SeqCst));
        let now = self.clock.now();
        let with_aspects = attributes.is_some();
        let state = SessionState {
            id: id.clone(),
            opened_at: now,
            last_activity: now,
            attributes,
            turns: Vec::new(),
            closed_at: None,
            resolved: None,
        };
        self.sessions.lock().expect("session map poisoned").insert(id.clone(), Arc::new(Mutex::new(state)));
        self.events.append(now, EventKind::SessionOpened { session_id: id.clone(), with_aspects })?;
        Ok(SessionSummary { session_id: id, with_aspects })
    }

    pub fn recommend(&self, session_id: &str, text: &str) -> Result<Recommendation, ServiceError> {
        let handle = self.session_handle(session_id)?;
        let mut session = handle.lock().expect("session poisoned");
        if session.is_closed() {
            return Err(validation(format!("session {session_id} is closed")));
        }
        if tokenize(text).is_empty() {
            return Err(validation("utterance has no tokens"));
        }
        let snap = self.snapshot()?;
        let started = Instant::now();
        let aspects = match &session.attributes {
            Some(a) => snap.encode_aspects(a)?,
            None => None,
        };
        let context: Vec<&str> = session
            .turns
            .iter()
            .rev()
            .take(self.config.context_turns - 1)
            .map(|t| t.utterance.as_str())
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .chain(std::iter::once(text))
            .collect();
        let recognition = snap.recognize(&context.join(" "), aspects.as_ref(), &self.config)?;
        let catalog = snap.catalog();
        let items = recognition
            .shown
            .iter()
            .map(|(id, score)| {
                let e = catalog.get(id).ok_or_else(|| ServiceError::Internal(format!("scenario {id} missing from table")))?;
                Ok(RecommendedItem {
                    scenario_id: id.clone(),
                    score: *score,
                    description: e.description.clone(),
                    solution: e.solution.clone(),
                    domain: e.domain.clone(),
                })
            })
            .collect::<Result<Vec<_>, ServiceError>>()?;
        let latency_ms = started.elapsed().as_secs_f64() * 1e3;
        let turn = session.turns.len();
        let rec = Recommendation {
            session_id: session_id.to_string(),
            turn,
            fallback: items.is_empty(),
            items,
            latency_ms,
            model: recognition.model,
            catalog_version: catalog.version().to_string(),
        };
        let now = self.clock.now();
        self.events.append(
            now,
            EventKind::Recommended {
                session_id: session_id.to_string(),
                turn,
                utterance: text.to_string(),
                shown: rec.items.iter().map(|i| i.scenario_id.clone()).collect(),
                fallback: rec.fallback,
                latency_ms,
            },
        )?;
        session.last_activity = now;
        session.turns.push(TurnRecord { turn, utterance: text.to_string(), recommendation: rec.clone(), feedback: None });
        Ok(rec)
    }

    pub fn feedback(&self, session_id: &str, request: &FeedbackRequest) -> Result<(), ServiceError> {
        let handle = self.session_handle(session_id)?;
        let mut session = handle.lock().expect("session poisoned");
        if session.is_closed() {
            return Err(validation(format!("session {session_id} is closed")));
        }
        let record =
            session.turns.get(request.turn).ok_or_else(|| validation(format!("session {session_id} has no turn {}", request.turn)))?;
        if record.feedback.is_some() {
            return Err(validation(format!("turn {} already has feedback", request.turn)));
        }
        let shown = &record.recommendation.items;
        match (request.outcome, &request.scenario_id) {
            (Outcome::Accepted, None) => return Err(validation("accepted feedback needs a scenario_id")),
            (Outcome::Accepted, Some(s)) if !shown.iter().any(|i| &i.scenario_id == s) => {
                return Err(validation(format!("scenario {s} was not shown in turn {}", request.turn)))
            }
            (Outcome::Rejected, _) if shown.is_empty() => {
                return Err(validation(format!("turn {} showed nothing to reject", request.turn)))
            }
            (Outcome::Rejected | Outcome::Manual, Some(_)) => return Err(validation("scenario_id is only allowed with accepted feedback")),
            _ => {}
        }
        let judged_recommendation = !shown.is_empty();
        let now = self.clock.now();
        self.events.append(
            now,
            EventKind::Feedback {
                session_id: session_id.to_string(),
                turn: request.turn,
                outcome: request.outcome,
                scenario_id: request.scenario_id.clone(),
                judged_recommendation,
            },
        )?;
        session.last_activity = now;
        session.turns[request.turn].feedback = Some(request.clone());
        Ok(())
    }

    pub fn close(&self, session_id: &str, resolved: bool) -> Result<SessionState, ServiceError> {
        let handle = self.session_handle(session_id)?;
        let mut session = handle.lock().expect("session poisoned");
        if session.is_closed() {
            return Err(validation(format!("session {session_id} is already closed")));
        }
        let now = self.clock.now();
        let duration_s = (now - session.opened_at).max(0.0);
        self.events.append(now, EventKind::SessionClosed { session_id: session_id.to_string(), resolved, duration_s })?;
        session.closed_at = Some(now);
        session.resolved = Some(resolved);
        session.last_activity = now;
        Ok(session.clone())
    }

    pub fn session(&self, session_id: &str) -> Result<SessionState, ServiceError> {
        Ok(self.session_handle(session_id)?.lock().expect("session poisoned").clone())
    }

    pub fn events(&self) -> Vec<Event> {
        self.events.snapshot()
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        let catalog_size = self.snapshot().map(|s| s.catalog().len()).unwrap_or(0);
        MetricsSnapshot::from_events(&self.events.snapshot(), catalog_size)
    }

    /// Accepted recommendations as organic positives for later training.
    pub fn export_positives(&self) -> Result<Vec<TrainingTriplet>, ServiceError> {
        let catalog = self.catalog()?;
        let mut out = Vec::new();
        for (session_id, utterance, scenario_id) in accepted_pairs(&self.events.snapshot()) {
            let Some(entry) = catalog.get(&scenario_id) else { continue };
            let aspects = self.session(&session_id).ok().and_then(|s| s.attributes);
            out.push(TrainingTriplet {
                session_id,
                utterance,
                scenario: entry.description.clone(),
                scenario_id,
                label: 1,
                aspects,
                provenance: Provenance::Organic,
            });
        }
        Ok(out)
    }
}
