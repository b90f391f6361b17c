use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::matcher::{Matcher, MatcherError, PairBatch};
use crate::service::percentile;

use super::{ExampleSet, TrainError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean single-pair scoring latency, when benchmarked.
    pub latency_ms: Option<f64>,
    pub samples: usize,
    pub confusion: Confusion,
    pub threshold: f64,
}

/// Classification metrics for `scores` against 0/1 `labels`; a score
/// counts as positive when it is strictly above `threshold`. Undefined
/// ratios (no predicted or no actual positives) are reported as 0.
pub fn report_from_scores(scores: &[f64], labels: &[f64], threshold: f64) -> Result<EvalReport, TrainError> {
    if scores.len() != labels.len() {
        return Err(TrainError::Data(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.is_empty() {
        return Err(TrainError::Data("nothing to evaluate".into()));
    }
    let mut c = Confusion::default();
    for (&p, &y) in scores.iter().zip(labels) {
        match (p > threshold, y > 0.5) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(EvalReport {
        accuracy: ratio(c.tp + c.tn, scores.len()),
        precision,
        recall,
        f1,
        latency_ms: None,
        samples: scores.len(),
        confusion: c,
        threshold,
    })
}

/// Eval-mode probabilities for every example, in order.
pub fn predict_set<M: Matcher + ?Sized>(model: &M, set: &ExampleSet) -> Result<Vec<f64>, TrainError> {
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.len());
    for chunk in idx.chunks(256) {
        let batch = set.batch(model.vocab(), model.seq_len(), chunk)?;
        out.extend(model.predict_batch(&batch)?);
    }
    Ok(out)
}

pub fn evaluate<M: Matcher + ?Sized>(model: &M, set: &ExampleSet, threshold: f64) -> Result<EvalReport, TrainError> {
    report_from_scores(&predict_set(model, set)?, &set.labels, threshold)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub warmup: usize,
    pub iterations: usize,
}

/// Times `score` on one pair at a time, cycling through `set`, after
/// `warmup` untimed calls.
pub fn bench_scorer<F>(mut score: F, set: &ExampleSet, warmup: usize, iterations: usize) -> Result<LatencyStats, TrainError>
where
    F: FnMut(&[String], &[String], usize) -> Result<f64, MatcherError>,
{
    if warmup < 50 {
        return Err(TrainError::Config(format!("warmup of {warmup} calls is below the minimum of 50")));
    }
    if iterations == 0 || set.is_empty() {
        return Err(TrainError::Config("latency benchmark needs iterations and examples".into()));
    }
    let call = |i: usize, score: &mut F| {
        let j = i % set.len();
        score(&set.utterances[j], &set.scenarios[j], j)
    };
    for i in 0..warmup {
        std::hint::black_box(call(i, &mut score)?);
    }
    let mut times = Vec::with_capacity(iterations);
    for i in 0..iterations {
        let start = Instant::now();
        std::hint::black_box(call(warmup + i, &mut score)?);
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = times.iter().sum::<f64>() / times.len() as f64;
    times.sort_by(f64::total_cmp);
    Ok(LatencyStats {
        mean_ms,
        p50_ms: percentile(&times, 0.5).unwrap_or(0.0),
        p99_ms: percentile(&times, 0.99).unwrap_or(0.0),
        warmup,
        iterations,
    })
}

/// Single-pair latency of a matcher, including tokens-to-ids batching.
pub fn bench_latency<M: Matcher + ?Sized>(
    model: &M,
    set: &ExampleSet,
    warmup: usize,
    iterations: usize,
) -> Result<LatencyStats, TrainError> {
    bench_scorer(
        |u, s, j| {
            let mut batch = PairBatch::from_tokens(model.vocab(), model.seq_len(), &[(u, s)])?;
            if let Some(a) = &set.aspects {
                batch = batch.with_aspects(a[j].0.clone());
            }
            Ok(model.predict_batch(&batch)?[0])
        },
        set,
        warmup,
        iterations,
    )
}
