//! Contract of the triplet pipeline on random session logs.

use std::collections::{BTreeMap, HashSet};

use ics_core::data_prep::{
    prepare, OperationKind, PrepConfig, Provenance, SessionLogRecord, StaffOperation, TimedUtterance, TrainingTriplet,
};
use ics_core::service::{ScenarioEntry, ScenarioSolutionTable};
use ics_core::ScenarioId;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn catalog(n: usize) -> ScenarioSolutionTable {
    ScenarioSolutionTable::from_entries((0..n).map(|i| ScenarioEntry {
        scenario_id: format!("sc{i}").into(),
        description: format!("scenario number {i}"),
        solution: format!("solution {i}"),
        domain: "retail".into(),
    }))
    .unwrap()
}

/// Sessions whose clicks favour low scenario ids, so that some scenarios
/// are common and others rare.
fn logs(seed: u64, sessions: usize, scenarios: usize) -> Vec<SessionLogRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..sessions)
        .map(|i| {
            let mut ts = 0.0;
            let mut utterances = Vec::new();
            let mut operations = Vec::new();
            for _ in 0..rng.gen_range(1..6) {
                ts += rng.gen_range(0.0..5.0);
                if rng.gen_bool(0.6) {
                    utterances.push(TimedUtterance { ts, text: format!("customer says {} {}", rng.gen_range(0..40), rng.gen_range(0..3)) });
                } else {
                    let s = (rng.gen_range(0.0f64..1.0).powi(3) * scenarios as f64) as usize;
                    let kind = [OperationKind::Click, OperationKind::Search, OperationKind::Hover][rng.gen_range(0..3)];
                    operations.push(StaffOperation { ts, kind, scenario_id: format!("sc{s}").into() });
                }
            }
            let attributes =
                if rng.gen_bool(0.5) { [("customer_tier".to_string(), json!("gold"))].into_iter().collect() } else { BTreeMap::new() };
            SessionLogRecord { id: format!("session-{i:04}"), utterances, operations, attributes }
        })
        .collect()
}

pub fn check(seed: u64, sessions: usize, scenarios: usize) -> Result<(), TestCaseError> {
    let cat = catalog(scenarios);
    let logs = logs(seed, sessions, scenarios);
    let config = PrepConfig { seed, ..PrepConfig::default() };
    let prepared = prepare(&logs, &cat, &config).unwrap();
    let all: Vec<&TrainingTriplet> = prepared.split.train.iter().chain(&prepared.split.validation).chain(&prepared.split.test).collect();

    let mut organic: BTreeMap<&ScenarioId, usize> = BTreeMap::new();
    let mut positives: BTreeMap<&ScenarioId, usize> = BTreeMap::new();
    for t in all.iter().filter(|t| t.label == 1) {
        *positives.entry(&t.scenario_id).or_default() += 1;
        if t.provenance == Provenance::Organic {
            *organic.entry(&t.scenario_id).or_default() += 1;
        }
    }
    for (id, &c) in &organic {
        let want = if c < config.rarity_threshold { c * config.upsample_factor } else { c };
        prop_assert_eq!(positives[id], want, "scenario {}", id);
    }
    prop_assert_eq!(organic.len(), positives.len());

    let n_pos = all.iter().filter(|t| t.label == 1).count();
    let n_neg = all.iter().filter(|t| t.label == 0).count();
    prop_assert_eq!(n_pos, n_neg);
    prop_assert!(all.iter().all(|t| (t.label == 0) == (t.provenance == Provenance::Negative)));

    let linked: HashSet<(&str, &ScenarioId)> =
        all.iter().filter(|t| t.label == 1).map(|t| (t.utterance.as_str(), &t.scenario_id)).collect();
    prop_assert!(all.iter().filter(|t| t.label == 0).all(|t| !linked.contains(&(t.utterance.as_str(), &t.scenario_id))));

    let session_sets: Vec<HashSet<&str>> = [&prepared.split.train, &prepared.split.validation, &prepared.split.test]
        .iter()
        .map(|p| p.iter().map(|t| t.session_id.as_str()).collect())
        .collect();
    prop_assert!(session_sets[0].is_disjoint(&session_sets[1]));
    prop_assert!(session_sets[0].is_disjoint(&session_sets[2]));
    prop_assert!(session_sets[1].is_disjoint(&session_sets[2]));

    prop_assert_eq!(prepare(&logs, &cat, &config).unwrap(), prepared);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn upsampling_negatives_and_splits(seed in 0u64..10_000, sessions in 1usize..150, scenarios in 2usize..8) {
        check(seed, sessions, scenarios)?;
    }
}

#[test]
fn common_and_rare_scenarios_both_occur() {
    // a fixed case large enough that sc0 crosses the rarity threshold
    let cat = catalog(6);
    let logs = logs(42, 400, 6);
    let prepared = prepare(&logs, &cat, &PrepConfig::default()).unwrap();
    assert!(!prepared.stats.rare_scenarios.is_empty());
    assert!(prepared.stats.rare_scenarios.len() < 6);
    check(42, 400, 6).unwrap();
}
