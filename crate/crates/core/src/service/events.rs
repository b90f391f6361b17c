use std::collections::{BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::data_prep::read_jsonl;
use crate::ScenarioId;

use super::session::Outcome;
use super::ServiceError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    SessionOpened {
        session_id: String,
        with_aspects: bool,
    },
    Recommended {
        session_id: String,
        turn: usize,
        utterance: String,
        shown: Vec<ScenarioId>,
        fallback: bool,
        latency_ms: f64,
    },
    Feedback {
        session_id: String,
        turn: usize,
        outcome: Outcome,
        /// Set for accepted outcomes.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scenario_id: Option<ScenarioId>,
        /// Whether the judged turn showed any recommendation.
        judged_recommendation: bool,
    },
    SessionClosed {
        session_id: String,
        resolved: bool,
        duration_s: f64,
    },
}

/// One immutable log entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    /// Clock seconds.
    pub ts: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Business metrics over a window of events.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    /// Accepted turns over judged turns that showed recommendations.
    pub sar: Option<f64>,
    /// Distinct scenarios ever shown over catalog size.
    pub scr: Option<f64>,
    /// Mean open-to-close duration of closed sessions, seconds.
    pub ast_seconds: Option<f64>,
    /// Survey-based; entered manually, never computed here.
    pub csr: Option<f64>,
    /// Needs several business deployments; entered manually.
    pub bcr: Option<f64>,
    pub sessions_opened: usize,
    pub sessions_closed: usize,
    pub sessions_resolved: usize,
    pub turns: usize,
    pub recommended_turns: usize,
    pub fallback_turns: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub manual: usize,
    pub distinct_shown: usize,
    pub catalog_size: usize,
    pub latency_p50_ms: Option<f64>,
    pub latency_p99_ms: Option<f64>,
    pub window_start: Option<f64>,
    pub window_end: Option<f64>,
}

/// Nearest-rank percentile of `sorted` (ascending).
pub(crate) fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[rank - 1])
}

impl MetricsSnapshot {
    /// Recomputes every metric from scratch; the log is the only input.
    pub fn from_events(events: &[Event], catalog_size: usize) -> Self {
        let mut m = MetricsSnapshot { catalog_size, ..Default::default() };
        let mut shown = BTreeSet::new();
        let mut durations = Vec::new();
        let mut latencies = Vec::new();
        let mut judged = 0usize;
        for e in events {
            m.window_start = Some(m.window_start.map_or(e.ts, |s: f64| s.min(e.ts)));
            m.window_end = Some(m.window_end.map_or(e.ts, |s: f64| s.max(e.ts)));
            match &e.kind {
                EventKind::SessionOpened { .. } => m.sessions_opened += 1,
                EventKind::Recommended { shown: s, fallback, latency_ms, .. } => {
                    m.turns += 1;
                    if *fallback {
                        m.fallback_turns += 1;
                    } else {
                        m.recommended_turns += 1;
                    }
                    shown.extend(s.iter().cloned());
                    latencies.push(*latency_ms);
                }
                EventKind::Feedback { outcome, judged_recommendation, .. } => {
                    match outcome {
                        Outcome::Accepted => m.accepted += 1,
                        Outcome::Rejected => m.rejected += 1,
                        Outcome::Manual => m.manual += 1,
                    }
                    if *judged_recommendation {
                        judged += 1;
                    }
                }
                EventKind::SessionClosed { resolved, duration_s, .. } => {
                    m.sessions_closed += 1;
                    m.sessions_resolved += usize::from(*resolved);
                    durations.push(*duration_s);
                }
            }
        }
        m.distinct_shown = shown.len();
        m.sar = (judged > 0).then(|| m.accepted as f64 / judged as f64);
        m.scr = (catalog_size > 0).then(|| (shown.len() as f64 / catalog_size as f64).min(1.0));
        m.ast_seconds = (!durations.is_empty()).then(|| durations.iter().sum::<f64>() / durations.len() as f64);
        latencies.sort_by(f64::total_cmp);
        m.latency_p50_ms = percentile(&latencies, 0.5);
        m.latency_p99_ms = percentile(&latencies, 0.99);
        m
    }
}

/// Append-only event store, optionally mirrored to a JSON-lines file.
#[derive(Debug, Default)]
pub struct EventLog {
    events: Mutex<Vec<Event>>,
    sink: Option<Mutex<BufWriter<File>>>,
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Appends to `path`, creating it if needed. Existing lines are kept
    /// on disk but not loaded.
    pub fn with_file(path: &Path) -> Result<Self, ServiceError> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { events: Mutex::default(), sink: Some(Mutex::new(BufWriter::new(f))) })
    }

    pub fn append(&self, ts: f64, kind: EventKind) -> Result<Event, ServiceError> {
        let mut events = self.events.lock().expect("event log poisoned");
        let event = Event { seq: events.len() as u64, ts, kind };
        if let Some(sink) = &self.sink {
            let mut w = sink.lock().expect("event sink poisoned");
            serde_json::to_writer(&mut *w, &event).map_err(|e| ServiceError::Internal(e.to_string()))?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        events.push(event.clone());
        Ok(event)
    }

    pub fn snapshot(&self) -> Vec<Event> {
        self.events.lock().expect("event log poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.events.lock().expect("event log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn read_file(path: &Path) -> Result<Vec<Event>, ServiceError> {
        read_jsonl(File::open(path)?).map_err(|e| ServiceError::Validation(e.to_string()))
    }
}

/// Accepted (utterance, scenario) pairs, in log order, usable as future
/// training positives.
pub(crate) fn accepted_pairs(events: &[Event]) -> Vec<(String, String, ScenarioId)> {
    let mut utterances: HashMap<(&str, usize), &str> = HashMap::new();
    let mut out = Vec::new();
    for e in events {
        match &e.kind {
            EventKind::Recommended { session_id, turn, utterance, .. } => {
                utterances.insert((session_id, *turn), utterance);
            }
            EventKind::Feedback { session_id, turn, outcome: Outcome::Accepted, scenario_id: Some(s), .. } => {
                if let Some(u) = utterances.get(&(session_id.as_str(), *turn)) {
                    out.push((session_id.clone(), u.to_string(), s.clone()));
                }
            }
            _ => {}
        }
    }
    out
}
