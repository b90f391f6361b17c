use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data_prep::ReplayItem;
use crate::ScenarioId;

use super::events::{percentile, EventLog, MetricsSnapshot};
use super::session::{FeedbackRequest, Outcome, Service};
use super::{ManualClock, ModelSnapshot, RecommendConfig, ServiceError};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecall {
    pub items: usize,
    /// True scenario inside the coarse top-K.
    pub coarse_hits: usize,
    /// True scenario among the shown recommendations.
    pub shown_hits: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub items: usize,
    /// Share of items whose true scenario was shown.
    pub scr: f64,
    /// Share of items whose true scenario survived the coarse stage.
    pub coarse_recall: f64,
    /// Share of items whose true scenario was the top fine-scored candidate.
    pub top1_accuracy: f64,
    pub fallback_rate: f64,
    pub k: usize,
    pub latency_mean_ms: f64,
    pub latency_p50_ms: f64,
    pub latency_p99_ms: f64,
    /// Invariant breaches seen during the replay (expected to be empty).
    pub violations: Vec<String>,
    pub per_scenario: BTreeMap<ScenarioId, ScenarioRecall>,
    /// Live metrics of the simulated sessions.
    pub metrics: MetricsSnapshot,
}

/// Runs every item through the full pipeline as its own session. Staff
/// accept the true scenario when shown, otherwise reject (or answer
/// manually on a fallback turn), and each session lasts one simulated
/// minute.
pub fn replay_evaluate(snapshot: Arc<ModelSnapshot>, config: &RecommendConfig, items: &[ReplayItem]) -> Result<ReplayReport, ServiceError> {
    if items.is_empty() {
        return Err(ServiceError::Validation("replay set is empty".into()));
    }
    let clock = ManualClock::new(0.0);
    let service = Service::new(config.clone(), EventLog::in_memory(), Arc::new(clock.clone()))?;
    let catalog = snapshot.catalog().clone();
    service.install_arc(snapshot.clone());
    let mut per_scenario: BTreeMap<ScenarioId, ScenarioRecall> = BTreeMap::new();
    let (mut shown_hits, mut coarse_hits, mut top1, mut fallbacks) = (0usize, 0usize, 0usize, 0usize);
    let mut latencies = Vec::with_capacity(items.len());
    let mut violations = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let attrs = (!item.attributes.is_empty()).then(|| item.attributes.clone());
        let aspects = match &attrs {
            Some(a) => snapshot.encode_aspects(a)?,
            None => None,
        };
        let session = service.open(attrs)?;
        let rec = service.recommend(&session.session_id, &item.utterance)?;
        let recognition = snapshot.recognize(&item.utterance, aspects.as_ref(), config)?;
        latencies.push(rec.latency_ms);
        let shown: Vec<&ScenarioId> = rec.items.iter().map(|r| &r.scenario_id).collect();
        if shown != recognition.shown.iter().map(|(id, _)| id).collect::<Vec<_>>() {
            violations.push(format!("item {i}: served list differs from a direct pipeline run"));
        }
        if let Some(bad) = shown.iter().find(|id| !catalog.contains(id)) {
            violations.push(format!("item {i}: unmapped scenario {bad}"));
        }
        if rec.items.windows(2).any(|w| w[0].score < w[1].score) || rec.items.iter().any(|r| r.score < config.threshold) {
            violations.push(format!("item {i}: recommendation order or threshold broken"));
        }
        let in_coarse = recognition.coarse.iter().any(|(id, _)| id == &item.scenario_id);
        let hit = shown.contains(&&item.scenario_id);
        let entry = per_scenario.entry(item.scenario_id.clone()).or_default();
        entry.items += 1;
        entry.coarse_hits += usize::from(in_coarse);
        entry.shown_hits += usize::from(hit);
        coarse_hits += usize::from(in_coarse);
        shown_hits += usize::from(hit);
        top1 += usize::from(recognition.scored.first().map(|(id, _)| id) == Some(&item.scenario_id));
        fallbacks += usize::from(rec.fallback);
        let feedback = if hit {
            FeedbackRequest { turn: rec.turn, outcome: Outcome::Accepted, scenario_id: Some(item.scenario_id.clone()) }
        } else if rec.fallback {
            FeedbackRequest { turn: rec.turn, outcome: Outcome::Manual, scenario_id: None }
        } else {
            FeedbackRequest { turn: rec.turn, outcome: Outcome::Rejected, scenario_id: None }
        };
        service.feedback(&session.session_id, &feedback)?;
        // an accept for a scenario that was never shown must be refused
        if let Some(unshown) = catalog.ids().find(|id| !shown.contains(id)) {
            let bogus = FeedbackRequest { turn: rec.turn, outcome: Outcome::Accepted, scenario_id: Some(unshown.clone()) };
            if service.feedback(&session.session_id, &bogus).is_ok() {
                violations.push(format!("item {i}: feedback for an unshown scenario was accepted"));
            }
        }
        clock.advance(60.0);
        service.close(&session.session_id, hit)?;
    }
    let metrics = service.metrics();
    if MetricsSnapshot::from_events(&service.events(), catalog.len()) != metrics {
        violations.push("metrics differ when rebuilt from the event log".into());
    }
    let n = items.len() as f64;
    latencies.sort_by(f64::total_cmp);
    Ok(ReplayReport {
        items: items.len(),
        scr: shown_hits as f64 / n,
        coarse_recall: coarse_hits as f64 / n,
        top1_accuracy: top1 as f64 / n,
        fallback_rate: fallbacks as f64 / n,
        k: config.k,
        latency_mean_ms: latencies.iter().sum::<f64>() / n,
        latency_p50_ms: percentile(&latencies, 0.5).unwrap_or(0.0),
        latency_p99_ms: percentile(&latencies, 0.99).unwrap_or(0.0),
        violations,
        per_scenario,
        metrics,
    })
}
