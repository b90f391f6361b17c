//! Teacher fine-tuning, panel distillation, two-stage hybrid training,
//! evaluation and latency benchmarks.

mod eval;
mod phases;

pub use eval::{bench_latency, bench_scorer, evaluate, predict_set, report_from_scores, Confusion, EvalReport, LatencyStats};
pub use phases::{
    distill_student, panel_objective, teacher_scores, train_hybrid, train_supervised, train_teacher, HybridRuns, HybridTrainConfig, Panel,
    PanelConfig,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_prep::TrainingTriplet;
use crate::matcher::{AspectFeatureVector, AspectSchema, Matcher, MatcherError, PairBatch};
use crate::numerics::{AdamState, Mode, NumericsError, ParamStore, Schedule, Tape};
use crate::text::{tokenize, Vocabulary};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Matcher(#[from] MatcherError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Data(String),
    #[error("{phase:?} diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged { phase: Phase, epoch: usize, step: u64, loss: f64 },
    #[error("{0}")]
    Contract(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Teacher,
    Distill,
    HybridStage1,
    HybridStage2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub seed: u64,
    /// Stop after this many epochs without improvement of the selection
    /// metric.
    pub patience: Option<usize>,
    /// Decision threshold for validation metrics.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 64, schedule: Schedule::Constant { rate: 1e-4 }, seed: 0, patience: None, threshold: 0.5 }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.patience == Some(0) {
            return Err(TrainError::Config("patience must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean training objective over the epoch's batches.
    pub train_loss: f64,
    /// Mean hard-label BCE on the validation set.
    pub val_loss: f64,
    pub val_f1: f64,
    pub val_accuracy: f64,
    /// Rate the next optimizer step would use.
    pub learning_rate: f64,
    /// Optimizer steps completed so far in this run.
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub phase: Phase,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub patience: Option<usize>,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Runs recorded in the order teacher → distill → hybrid stage 1 → stage 2.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseLog {
    runs: Vec<TrainRun>,
}

impl PhaseLog {
    pub fn push(&mut self, run: TrainRun) -> Result<(), TrainError> {
        if let Some(last) = self.runs.last() {
            if run.phase < last.phase || (run.phase == last.phase && run.phase != Phase::Teacher) {
                return Err(TrainError::Contract(format!("{:?} cannot follow {:?}", run.phase, last.phase)));
            }
        }
        self.runs.push(run);
        Ok(())
    }

    pub fn runs(&self) -> &[TrainRun] {
        &self.runs
    }
}

/// Tokenized training examples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExampleSet {
    pub utterances: Vec<Vec<String>>,
    pub scenarios: Vec<Vec<String>>,
    pub labels: Vec<f64>,
    /// Encoded aspects for every example, when built with a schema.
    pub aspects: Option<Vec<AspectFeatureVector>>,
    /// Examples that carried attributes (the rest encode as all-missing).
    pub with_attributes: usize,
}

impl ExampleSet {
    pub fn from_triplets(triplets: &[TrainingTriplet], schema: Option<&AspectSchema>) -> Result<Self, TrainError> {
        let mut set = Self { aspects: schema.map(|_| Vec::with_capacity(triplets.len())), ..Default::default() };
        for (i, t) in triplets.iter().enumerate() {
            let (u, s) = (tokenize(&t.utterance), tokenize(&t.scenario));
            if u.is_empty() || s.is_empty() {
                return Err(TrainError::Data(format!("triplet {i} has an empty utterance or description")));
            }
            set.utterances.push(u);
            set.scenarios.push(s);
            set.labels.push(f64::from(t.label));
            if let (Some(schema), Some(out)) = (schema, set.aspects.as_mut()) {
                let attrs = t.aspects.clone().unwrap_or_default();
                set.with_attributes += usize::from(t.aspects.is_some());
                out.push(schema.encode(&attrs).map_err(|e| TrainError::Data(format!("triplet {i}: {e}")))?);
            }
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn batch(&self, vocab: &Vocabulary, seq_len: usize, idx: &[usize]) -> Result<PairBatch, TrainError> {
        let pairs: Vec<(&[String], &[String])> =
            idx.iter().map(|&i| (self.utterances[i].as_slice(), self.scenarios[i].as_slice())).collect();
        let batch = PairBatch::from_tokens(vocab, seq_len, &pairs)?;
        Ok(match &self.aspects {
            Some(a) => batch.with_aspects(idx.iter().flat_map(|&i| a[i].0.iter().copied()).collect()),
            None => batch,
        })
    }

    pub fn labels_at(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }
}

/// Which parameters a run keeps at the end.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Select {
    BestF1,
    BestValLoss,
}

/// Shared minibatch loop. `soft` holds `(λ_i, teacher probability per
/// training example)`.
fn fit<M: Matcher>(
    model: &mut M,
    train: &ExampleSet,
    val: &ExampleSet,
    config: &TrainConfig,
    phase: Phase,
    soft: &[(f64, Vec<f64>)],
    select: Select,
) -> Result<TrainRun, TrainError> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::Data("training and validation sets must be non-empty".into()));
    }
    let mut adam = AdamState::new(config.schedule);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut run = TrainRun {
        phase,
        seed: config.seed,
        epochs: config.epochs,
        batch_size: config.batch_size,
        schedule: config.schedule,
        patience: config.patience,
        history: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best: Option<(f64, ParamStore)> = None;
    let mut since_best = 0;
    let (vocab, seq_len) = (model.vocab().clone(), model.seq_len());
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch = train.batch(&vocab, seq_len, chunk)?;
            let labels = train.labels_at(chunk);
            let targets: Vec<(f64, Vec<f64>)> = soft.iter().map(|(lambda, p)| (*lambda, chunk.iter().map(|&i| p[i]).collect())).collect();
            let (loss, bound, grads) = {
                let mut tape = Tape::new(Mode::Train);
                let bound = model.params().bind(&mut tape);
                let pred = model.forward(&mut tape, &bound, &batch, &mut rng)?;
                let l2 = model.params().regularized_vars(&bound);
                let l2 = tape.l2_penalty(&l2, model.l2())?;
                let loss = panel_objective(&mut tape, pred, &labels, &targets, Some(l2))?;
                let value = tape.scalar(loss)?;
                if !value.is_finite() {
                    return Err(TrainError::Diverged { phase, epoch, step: adam.step_count(), loss: value });
                }
                (value, bound, tape.backward(loss)?)
            };
            model.params_mut().absorb(&bound, &grads)?;
            adam.step(model.params_mut())?;
            total += loss;
            batches += 1;
        }
        let scores = predict_set(&*model, val)?;
        let report = report_from_scores(&scores, &val.labels, config.threshold)?;
        let val_loss = scores.iter().zip(&val.labels).map(|(&p, &y)| crate::numerics::bce(y, p)).sum::<f64>() / val.len() as f64;
        run.history.push(EpochRecord {
            epoch,
            train_loss: total / batches as f64,
            val_loss,
            val_f1: report.f1,
            val_accuracy: report.accuracy,
            learning_rate: adam.current_rate(),
            steps: adam.step_count(),
        });
        tracing::info!(?phase, epoch, train_loss = total / batches as f64, val_loss, val_f1 = report.f1, "epoch done");
        let score = match select {
            Select::BestF1 => report.f1,
            Select::BestValLoss => -val_loss,
        };
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, model.params().clone()));
            run.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience.is_some_and(|p| since_best >= p) {
                run.stopped_early = true;
                tracing::info!(?phase, epoch, best_epoch = run.best_epoch, "no improvement, stopping early");
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        *model.params_mut() = params;
    }
    Ok(run)
}
