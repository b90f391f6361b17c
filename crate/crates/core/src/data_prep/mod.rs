//! Session logs to labelled (utterance, scenario description, label)
//! triplets: positive extraction, rare-scenario up-sampling, negative
//! sampling and session-level splits.

mod synthetic;

pub use synthetic::{generate, ReplayItem, SyntheticConfig, SyntheticCorpus};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matcher::Attributes;
use crate::service::ScenarioSolutionTable;
use crate::text::tokenize;
use crate::ScenarioId;

#[derive(Debug, Error)]
pub enum DataPrepError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("session {session}: {message}")]
    Invalid { session: String, message: String },
    #[error("session {session} references scenario {scenario} which is not in the catalog")]
    UnknownScenario { session: String, scenario: ScenarioId },
    #[error("catalog too small: no utterance has an unlinked scenario to pair with")]
    CatalogTooSmall,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedUtterance {
    /// Seconds since an arbitrary epoch.
    pub ts: f64,
    pub text: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperationKind {
    Click,
    Hover,
    Search,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaffOperation {
    pub ts: f64,
    pub kind: OperationKind,
    pub scenario_id: ScenarioId,
}

/// One logged conversation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionLogRecord {
    pub id: String,
    pub utterances: Vec<TimedUtterance>,
    pub operations: Vec<StaffOperation>,
    #[serde(default)]
    pub attributes: Attributes,
}

impl SessionLogRecord {
    /// Timestamps must be non-decreasing and every operation must name a
    /// catalog scenario.
    pub fn validate(&self, catalog: &ScenarioSolutionTable) -> Result<(), DataPrepError> {
        let invalid = |message: String| DataPrepError::Invalid { session: self.id.clone(), message };
        if self.utterances.windows(2).any(|w| w[1].ts < w[0].ts) {
            return Err(invalid("utterance timestamps decrease".into()));
        }
        if self.operations.windows(2).any(|w| w[1].ts < w[0].ts) {
            return Err(invalid("operation timestamps decrease".into()));
        }
        if let Some(op) = self.operations.iter().find(|o| !catalog.contains(&o.scenario_id)) {
            return Err(DataPrepError::UnknownScenario { session: self.id.clone(), scenario: op.scenario_id.clone() });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Organic,
    Upsampled,
    Negative,
}

/// The unit of supervision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingTriplet {
    pub session_id: String,
    #[serde(rename = "u")]
    pub utterance: String,
    pub scenario_id: ScenarioId,
    #[serde(rename = "s")]
    pub scenario: String,
    #[serde(rename = "y")]
    pub label: u8,
    /// Raw session attributes; encoded against the model's aspect schema
    /// at training time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aspects: Option<Attributes>,
    pub provenance: Provenance,
}

impl TrainingTriplet {
    /// True when both carry the same example, ignoring provenance.
    pub fn same_example(&self, other: &Self) -> bool {
        self.session_id == other.session_id
            && self.utterance == other.utterance
            && self.scenario_id == other.scenario_id
            && self.scenario == other.scenario
            && self.label == other.label
            && self.aspects == other.aspects
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Extraction {
    pub positives: Vec<TrainingTriplet>,
    /// Click/search operations with no earlier utterance in their session.
    pub skipped: usize,
    pub hovers_ignored: usize,
    pub duplicates: usize,
}

/// Pairs each click or search with the latest utterance at or before it.
pub fn extract_positives(logs: &[SessionLogRecord], catalog: &ScenarioSolutionTable) -> Result<Extraction, DataPrepError> {
    let mut out = Extraction::default();
    let mut seen = HashSet::new();
    for log in logs {
        log.validate(catalog)?;
        for op in &log.operations {
            if op.kind == OperationKind::Hover {
                out.hovers_ignored += 1;
                continue;
            }
            let Some(u) = log.utterances.iter().take_while(|u| u.ts <= op.ts).last() else {
                out.skipped += 1;
                continue;
            };
            if !seen.insert((log.id.clone(), u.text.clone(), op.scenario_id.clone())) {
                out.duplicates += 1;
                continue;
            }
            let entry = catalog.get(&op.scenario_id).expect("validated");
            out.positives.push(TrainingTriplet {
                session_id: log.id.clone(),
                utterance: u.text.clone(),
                scenario_id: op.scenario_id.clone(),
                scenario: entry.description.clone(),
                label: 1,
                aspects: (!log.attributes.is_empty()).then(|| log.attributes.clone()),
                provenance: Provenance::Organic,
            });
        }
    }
    Ok(out)
}

/// Organic positives per scenario.
pub fn organic_counts(triplets: &[TrainingTriplet]) -> BTreeMap<ScenarioId, usize> {
    let mut counts = BTreeMap::new();
    for t in triplets.iter().filter(|t| t.provenance == Provenance::Organic && t.label == 1) {
        *counts.entry(t.scenario_id.clone()).or_default() += 1;
    }
    counts
}

/// Replicates the organic positives of every scenario with fewer than
/// `rarity_threshold` of them until it holds exactly `factor` times its
/// organic count. Copies follow the originals, in original order.
pub fn upsample_rare(positives: &[TrainingTriplet], rarity_threshold: usize, factor: usize) -> Result<Vec<TrainingTriplet>, DataPrepError> {
    if factor == 0 {
        return Err(DataPrepError::Config("up-sampling factor must be at least 1".into()));
    }
    let counts = organic_counts(positives);
    let rare: Vec<&TrainingTriplet> = positives
        .iter()
        .filter(|t| t.provenance == Provenance::Organic && t.label == 1 && counts[&t.scenario_id] < rarity_threshold)
        .collect();
    let mut out = positives.to_vec();
    for _ in 1..factor {
        out.extend(rare.iter().map(|t| TrainingTriplet { provenance: Provenance::Upsampled, ..(*t).clone() }));
    }
    Ok(out)
}

/// Emits one negative per positive: a uniformly drawn positive utterance
/// with a uniformly drawn catalog scenario it is never positively linked to.
pub fn sample_negatives(
    positives: &[TrainingTriplet],
    catalog: &ScenarioSolutionTable,
    seed: u64,
) -> Result<Vec<TrainingTriplet>, DataPrepError> {
    if catalog.len() < 2 {
        return Err(DataPrepError::CatalogTooSmall);
    }
    let mut linked: HashMap<&str, HashSet<&ScenarioId>> = HashMap::new();
    for t in positives.iter().filter(|t| t.label == 1) {
        linked.entry(t.utterance.as_str()).or_default().insert(&t.scenario_id);
    }
    // one pool entry per distinct (session, utterance)
    let mut seen = HashSet::new();
    let pool: Vec<&TrainingTriplet> = positives
        .iter()
        .filter(|t| t.label == 1 && seen.insert((t.session_id.as_str(), t.utterance.as_str())))
        .filter(|t| linked[t.utterance.as_str()].len() < catalog.len())
        .collect();
    if pool.is_empty() {
        return if positives.is_empty() { Ok(Vec::new()) } else { Err(DataPrepError::CatalogTooSmall) };
    }
    let ids: Vec<&ScenarioId> = catalog.ids().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = positives.iter().filter(|t| t.label == 1).count();
    let mut out = Vec::with_capacity(target);
    while out.len() < target {
        let u = pool[rng.gen_range(0..pool.len())];
        let s = ids[rng.gen_range(0..ids.len())];
        if linked[u.utterance.as_str()].contains(s) {
            continue;
        }
        out.push(TrainingTriplet {
            session_id: u.session_id.clone(),
            utterance: u.utterance.clone(),
            scenario_id: s.clone(),
            scenario: catalog.get(s).expect("catalog id").description.clone(),
            label: 0,
            aspects: u.aspects.clone(),
            provenance: Provenance::Negative,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<TrainingTriplet>,
    pub validation: Vec<TrainingTriplet>,
    pub test: Vec<TrainingTriplet>,
}

/// Largest-remainder apportionment of `n` items to `ratios`.
fn quotas(n: usize, ratios: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut q: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let short = n - q.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        q[i] += 1;
    }
    q
}

/// Splits by session so no session straddles two parts. Sessions are
/// stratified by their first positive scenario: each stratum is shuffled
/// and spread evenly over one global ordering that is then cut by the
/// largest-remainder quotas of `ratios` (train, validation, test).
pub fn split(triplets: &[TrainingTriplet], ratios: [f64; 3], seed: u64) -> Result<Split, DataPrepError> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataPrepError::Config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let mut stratum_of: BTreeMap<&str, Option<&ScenarioId>> = BTreeMap::new();
    for t in triplets {
        let s = stratum_of.entry(t.session_id.as_str()).or_insert(None);
        if s.is_none() && t.label == 1 {
            *s = Some(&t.scenario_id);
        }
    }
    let mut strata: BTreeMap<Option<&ScenarioId>, Vec<&str>> = BTreeMap::new();
    for (session, stratum) in &stratum_of {
        strata.entry(*stratum).or_default().push(session);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placed: Vec<(f64, u64, &str)> = Vec::with_capacity(stratum_of.len());
    for sessions in strata.values_mut() {
        sessions.shuffle(&mut rng);
        let n = sessions.len() as f64;
        for (i, s) in sessions.iter().enumerate() {
            placed.push(((i as f64 + 0.5) / n, rng.gen(), s));
        }
    }
    placed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let q = quotas(placed.len(), &ratios);
    let part: HashMap<&str, usize> = placed
        .iter()
        .enumerate()
        .map(|(i, &(_, _, s))| {
            (
                s,
                if i < q[0] {
                    0
                } else if i < q[0] + q[1] {
                    1
                } else {
                    2
                },
            )
        })
        .collect();
    let mut out = Split::default();
    for t in triplets {
        match part[t.session_id.as_str()] {
            0 => out.train.push(t.clone()),
            1 => out.validation.push(t.clone()),
            _ => out.test.push(t.clone()),
        }
    }
    Ok(out)
}

/// Items flagged for human review instead of manual pair checking.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LintReport {
    pub triplets: usize,
    pub empty_utterances: Vec<usize>,
    pub empty_descriptions: Vec<usize>,
    pub mean_tokens: f64,
    pub std_tokens: f64,
    /// Indices of utterances more than three standard deviations longer
    /// than the mean.
    pub length_outliers: Vec<usize>,
}

pub fn lint(triplets: &[TrainingTriplet]) -> LintReport {
    let lens: Vec<f64> = triplets.iter().map(|t| tokenize(&t.utterance).len() as f64).collect();
    let n = lens.len().max(1) as f64;
    let mean = lens.iter().sum::<f64>() / n;
    let std = (lens.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n).sqrt();
    LintReport {
        triplets: triplets.len(),
        empty_utterances: lens.iter().enumerate().filter(|(_, &l)| l == 0.0).map(|(i, _)| i).collect(),
        empty_descriptions: triplets.iter().enumerate().filter(|(_, t)| tokenize(&t.scenario).is_empty()).map(|(i, _)| i).collect(),
        mean_tokens: mean,
        std_tokens: std,
        length_outliers: lens.iter().enumerate().filter(|(_, &l)| std > 0.0 && l > mean + 3.0 * std).map(|(i, _)| i).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepConfig {
    pub rarity_threshold: usize,
    pub upsample_factor: usize,
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self { rarity_threshold: 50, upsample_factor: 100, ratios: [0.8, 0.1, 0.1], seed: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrepStats {
    pub sessions: usize,
    pub organic_positives: usize,
    pub upsampled_positives: usize,
    pub negatives: usize,
    pub skipped_operations: usize,
    pub hovers_ignored: usize,
    pub duplicate_operations: usize,
    pub rare_scenarios: Vec<ScenarioId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedData {
    pub split: Split,
    pub stats: PrepStats,
    pub lint: LintReport,
}

/// The whole pipeline; a pure function of its inputs.
pub fn prepare(logs: &[SessionLogRecord], catalog: &ScenarioSolutionTable, config: &PrepConfig) -> Result<PreparedData, DataPrepError> {
    let mut logs = logs.to_vec();
    logs.sort_by(|a, b| a.id.cmp(&b.id));
    let extraction = extract_positives(&logs, catalog)?;
    let counts = organic_counts(&extraction.positives);
    let positives = upsample_rare(&extraction.positives, config.rarity_threshold, config.upsample_factor)?;
    let negatives = sample_negatives(&positives, catalog, config.seed)?;
    let stats = PrepStats {
        sessions: logs.len(),
        organic_positives: extraction.positives.len(),
        upsampled_positives: positives.len() - extraction.positives.len(),
        negatives: negatives.len(),
        skipped_operations: extraction.skipped,
        hovers_ignored: extraction.hovers_ignored,
        duplicate_operations: extraction.duplicates,
        rare_scenarios: counts.iter().filter(|(_, &c)| c < config.rarity_threshold).map(|(s, _)| s.clone()).collect(),
    };
    let mut all = positives;
    all.extend(negatives);
    let lint = lint(&all);
    let split = split(&all, config.ratios, config.seed.wrapping_add(1))?;
    Ok(PreparedData { split, stats, lint })
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned, R: Read>(reader: R) -> Result<Vec<T>, DataPrepError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DataPrepError::Parse { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}

pub fn load_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DataPrepError> {
    read_jsonl(fs::File::open(path)?)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut writer: W, items: &[T]) -> Result<(), DataPrepError> {
    for item in items {
        serde_json::to_writer(&mut writer, item).map_err(|e| DataPrepError::Config(e.to_string()))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DataPrepError> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    write_jsonl(&mut w, items)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::service::ScenarioEntry;

    fn catalog(n: usize) -> ScenarioSolutionTable {
        ScenarioSolutionTable::from_entries((0..n).map(|i| ScenarioEntry {
            scenario_id: format!("s{i}").into(),
            description: format!("scenario number {i}"),
            solution: format!("answer {i}"),
            domain: "retail".into(),
        }))
        .unwrap()
    }

    fn op(ts: f64, kind: OperationKind, s: &str) -> StaffOperation {
        StaffOperation { ts, kind, scenario_id: s.into() }
    }

    fn utt(ts: f64, text: &str) -> TimedUtterance {
        TimedUtterance { ts, text: text.into() }
    }

    fn session(id: &str, utterances: Vec<TimedUtterance>, operations: Vec<StaffOperation>) -> SessionLogRecord {
        SessionLogRecord { id: id.into(), utterances, operations, attributes: Attributes::new() }
    }

    #[test]
    fn click_after_utterance_yields_positive() {
        let logs = [session("a", vec![utt(1.0, "u1")], vec![op(2.0, OperationKind::Click, "s3")])];
        let ex = extract_positives(&logs, &catalog(5)).unwrap();
        assert_eq!(ex.positives.len(), 1);
        let t = &ex.positives[0];
        assert_eq!((t.utterance.as_str(), t.scenario.as_str(), t.label), ("u1", "scenario number 3", 1));
    }

    #[test]
    fn click_before_utterance_is_skipped_and_hover_ignored() {
        let logs = [session("a", vec![utt(5.0, "u1")], vec![op(1.0, OperationKind::Click, "s1"), op(6.0, OperationKind::Hover, "s2")])];
        let ex = extract_positives(&logs, &catalog(5)).unwrap();
        assert!(ex.positives.is_empty());
        assert_eq!((ex.skipped, ex.hovers_ignored), (1, 1));
    }

    #[test]
    fn repeated_click_is_deduplicated() {
        let logs = [session("a", vec![utt(1.0, "u1")], vec![op(2.0, OperationKind::Click, "s3"), op(3.0, OperationKind::Search, "s3")])];
        let ex = extract_positives(&logs, &catalog(5)).unwrap();
        assert_eq!(ex.positives.len(), 1);
        assert_eq!(ex.duplicates, 1);
    }

    #[test]
    fn nearest_preceding_utterance_wins() {
        let logs =
            [session("a", vec![utt(1.0, "first"), utt(3.0, "second"), utt(9.0, "third")], vec![op(4.0, OperationKind::Click, "s0")])];
        assert_eq!(extract_positives(&logs, &catalog(2)).unwrap().positives[0].utterance, "second");
    }

    #[test]
    fn invalid_logs_are_rejected() {
        let logs = [session("a", vec![utt(1.0, "u")], vec![op(2.0, OperationKind::Click, "nope")])];
        assert!(matches!(extract_positives(&logs, &catalog(2)), Err(DataPrepError::UnknownScenario { .. })));
        let logs = [session("a", vec![utt(2.0, "u"), utt(1.0, "v")], vec![])];
        assert!(matches!(extract_positives(&logs, &catalog(2)), Err(DataPrepError::Invalid { .. })));
    }

    fn positives(counts: &[(usize, usize)]) -> Vec<TrainingTriplet> {
        let mut out = Vec::new();
        for &(scenario, n) in counts {
            for i in 0..n {
                out.push(TrainingTriplet {
                    session_id: format!("sess{scenario}-{i}"),
                    utterance: format!("utterance {scenario} {i}"),
                    scenario_id: format!("s{scenario}").into(),
                    scenario: format!("scenario number {scenario}"),
                    label: 1,
                    aspects: None,
                    provenance: Provenance::Organic,
                });
            }
        }
        out
    }

    #[test]
    fn upsampling_reaches_exactly_factor_times() {
        let p = positives(&[(0, 7), (1, 60)]);
        let up = upsample_rare(&p, 50, 100).unwrap();
        let count = |s: &str| up.iter().filter(|t| t.scenario_id.as_str() == s).count();
        assert_eq!(count("s0"), 700);
        assert_eq!(count("s1"), 60);
        assert!(up.iter().filter(|t| t.provenance == Provenance::Upsampled).all(|c| p.iter().any(|o| o.same_example(c))));
        assert_eq!(upsample_rare(&p, 50, 1).unwrap(), p);
    }

    #[test]
    fn negatives_match_count_and_avoid_positives() {
        let p = upsample_rare(&positives(&[(0, 3), (1, 10), (2, 10)]), 5, 100).unwrap();
        let cat = catalog(6);
        let n = sample_negatives(&p, &cat, 11).unwrap();
        assert_eq!(n.len(), p.len());
        let pos: HashSet<(&str, &ScenarioId)> = p.iter().map(|t| (t.utterance.as_str(), &t.scenario_id)).collect();
        assert!(n.iter().all(|t| t.label == 0 && !pos.contains(&(t.utterance.as_str(), &t.scenario_id))));
        assert_eq!(n, sample_negatives(&p, &cat, 11).unwrap());
        assert!(matches!(sample_negatives(&p, &catalog(1), 0), Err(DataPrepError::CatalogTooSmall)));
    }

    #[test]
    fn fully_linked_utterances_cannot_yield_negatives() {
        let mut p = positives(&[(0, 1)]);
        let mut other = p[0].clone();
        other.scenario_id = "s1".into();
        p.push(other);
        assert!(matches!(sample_negatives(&p, &catalog(2), 0), Err(DataPrepError::CatalogTooSmall)));
    }

    #[test]
    fn split_by_session_with_exact_quotas() {
        let p = positives(&[(0, 40), (1, 30), (2, 30)]);
        let s = split(&p, [0.8, 0.1, 0.1], 5).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (80, 10, 10));
        let sessions = |v: &[TrainingTriplet]| v.iter().map(|t| t.session_id.clone()).collect::<HashSet<_>>();
        assert!(sessions(&s.train).is_disjoint(&sessions(&s.test)));
        assert!(sessions(&s.train).is_disjoint(&sessions(&s.validation)));
        assert_eq!(s, split(&p, [0.8, 0.1, 0.1], 5).unwrap());
        // every stratum reaches the test split
        let strata: HashSet<_> = s.test.iter().map(|t| t.scenario_id.clone()).collect();
        assert_eq!(strata.len(), 3);
        assert!(split(&p, [0.8, 0.1, 0.2], 5).is_err());
    }

    #[test]
    fn quotas_sum_to_total() {
        assert_eq!(quotas(7, &[0.8, 0.1, 0.1]), vec![5, 1, 1]);
        assert_eq!(quotas(100, &[0.8, 0.1, 0.1]), vec![80, 10, 10]);
    }

    #[test]
    fn lint_flags_outliers() {
        let mut p = positives(&[(0, 30)]);
        p[3].utterance = "word ".repeat(60);
        p[4].utterance = "?!".into();
        let r = lint(&p);
        assert_eq!(r.length_outliers, vec![3]);
        assert_eq!(r.empty_utterances, vec![4]);
    }

    #[test]
    fn jsonl_round_trip() {
        let p = positives(&[(0, 2)]);
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &p).unwrap();
        assert!(String::from_utf8_lossy(&buf).contains("\"u\":"));
        assert_eq!(read_jsonl::<TrainingTriplet, _>(buf.as_slice()).unwrap(), p);
    }
}
