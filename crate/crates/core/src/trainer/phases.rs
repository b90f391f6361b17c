use serde::{Deserialize, Serialize};

use crate::matcher::{HybridModel, Matcher, StudentModel, TeacherModel, WideTeacher};
use crate::numerics::{Schedule, Tape, Var};

use super::{fit, ExampleSet, Phase, Select, TrainConfig, TrainError, TrainRun};

/// Hard-label BCE plus the optional L2 term plus `λ_i · BCE(pred, t_i)`
/// for every soft-target set.
pub fn panel_objective(
    tape: &mut Tape<'_>,
    pred: Var,
    labels: &[f64],
    soft: &[(f64, Vec<f64>)],
    l2: Option<Var>,
) -> Result<Var, TrainError> {
    let mut total = tape.bce(pred, labels)?;
    if let Some(l2) = l2 {
        total = tape.add(total, l2)?;
    }
    for (lambda, targets) in soft {
        let term = tape.bce(pred, targets)?;
        let term = tape.scale(term, *lambda)?;
        total = tape.add(total, term)?;
    }
    Ok(total)
}

/// Plain supervised training with hard labels, keeping the epoch with the
/// best validation F1.
pub fn train_supervised<M: Matcher>(
    model: &mut M,
    train: &ExampleSet,
    val: &ExampleSet,
    config: &TrainConfig,
    phase: Phase,
) -> Result<TrainRun, TrainError> {
    fit(model, train, val, config, phase, &[], Select::BestF1)
}

/// Fine-tunes one teacher on hard labels.
pub fn train_teacher(
    teacher: &mut WideTeacher,
    train: &ExampleSet,
    val: &ExampleSet,
    config: &TrainConfig,
) -> Result<TrainRun, TrainError> {
    train_supervised(teacher, train, val, config, Phase::Teacher)
}

/// Frozen teachers with their distillation weights.
pub struct Panel<'a> {
    members: Vec<(&'a dyn TeacherModel, f64)>,
}

impl std::fmt::Debug for Panel<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.members.iter().map(|(t, l)| (t.id(), *l))).finish()
    }
}

impl<'a> Panel<'a> {
    /// Every teacher weighted `1 / |panel|`.
    pub fn uniform(teachers: Vec<&'a dyn TeacherModel>) -> Result<Self, TrainError> {
        let lambda = 1.0 / teachers.len().max(1) as f64;
        let n = teachers.len();
        Self::weighted(teachers, vec![lambda; n])
    }

    pub fn weighted(teachers: Vec<&'a dyn TeacherModel>, lambdas: Vec<f64>) -> Result<Self, TrainError> {
        if teachers.is_empty() {
            return Err(TrainError::Config("teacher panel is empty".into()));
        }
        if teachers.len() != lambdas.len() {
            return Err(TrainError::Config(format!("{} teachers but {} weights", teachers.len(), lambdas.len())));
        }
        if let Some(l) = lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(TrainError::Config(format!("teacher weight {l} must be finite and non-negative")));
        }
        Ok(Self { members: teachers.into_iter().zip(lambdas).collect() })
    }

    pub fn members(&self) -> &[(&'a dyn TeacherModel, f64)] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Panel weights as given in a config file; `None` means uniform.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PanelConfig {
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
}

impl PanelConfig {
    pub fn build<'a>(&self, teachers: Vec<&'a dyn TeacherModel>) -> Result<Panel<'a>, TrainError> {
        match &self.lambdas {
            Some(l) => Panel::weighted(teachers, l.clone()),
            None => Panel::uniform(teachers),
        }
    }
}

/// Each teacher's probability for every example of `set`, one row per
/// panel member. Teachers run on separate threads.
pub fn teacher_scores(panel: &Panel<'_>, set: &ExampleSet) -> Result<Vec<Vec<f64>>, TrainError> {
    let pairs: Vec<(&[String], &[String])> = set.utterances.iter().zip(&set.scenarios).map(|(u, s)| (u.as_slice(), s.as_slice())).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = panel
            .members
            .iter()
            .map(|(teacher, _)| {
                let pairs = &pairs;
                scope.spawn(move || -> Result<Vec<f64>, TrainError> {
                    let mut out = Vec::with_capacity(pairs.len());
                    for chunk in pairs.chunks(128) {
                        out.extend(teacher.score_pairs(chunk)?);
                    }
                    Ok(out)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("teacher scoring thread panicked")).collect()
    })
}

/// Trains the student on hard labels plus the panel's soft targets.
/// Teachers only ever run forward.
pub fn distill_student(
    student: &mut StudentModel,
    panel: &Panel<'_>,
    train: &ExampleSet,
    val: &ExampleSet,
    config: &TrainConfig,
) -> Result<TrainRun, TrainError> {
    if panel.is_empty() {
        return Err(TrainError::Config("teacher panel is empty".into()));
    }
    let scores = teacher_scores(panel, train)?;
    let soft: Vec<(f64, Vec<f64>)> = panel.members.iter().map(|(_, l)| *l).zip(scores).collect();
    fit(student, train, val, config, Phase::Distill, &soft, Select::BestF1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridTrainConfig {
    /// Student frozen; stops on validation-loss patience.
    pub stage1: TrainConfig,
    /// Everything trainable under a decaying rate.
    pub stage2: TrainConfig,
}

impl Default for HybridTrainConfig {
    fn default() -> Self {
        Self {
            stage1: TrainConfig { epochs: 50, schedule: Schedule::Constant { rate: 1e-3 }, patience: Some(3), ..TrainConfig::default() },
            stage2: TrainConfig {
                schedule: Schedule::ExponentialDecay { initial: 1e-4, decay_rate: 0.95, decay_steps: 10_000 },
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridRuns {
    pub stage1: TrainRun,
    pub stage2: TrainRun,
    /// Text-path fingerprint before stage 1 and after it; equal by
    /// construction.
    pub student_fingerprint_before: String,
    pub student_fingerprint_after_stage1: String,
}

/// Stage 1 trains the aspect and fusion layers with the student frozen;
/// stage 2 fine-tunes everything.
pub fn train_hybrid(
    hybrid: &mut HybridModel,
    train: &ExampleSet,
    val: &ExampleSet,
    config: &HybridTrainConfig,
) -> Result<HybridRuns, TrainError> {
    for (name, set) in [("training", train), ("validation", val)] {
        if set.aspects.is_none() || set.with_attributes == 0 {
            return Err(TrainError::Config(format!("hybrid training needs aspect data in the {name} set")));
        }
    }
    let before = hybrid.student_fingerprint();
    hybrid.set_student_frozen(true);
    let stage1 = fit(hybrid, train, val, &config.stage1, Phase::HybridStage1, &[], Select::BestValLoss);
    hybrid.set_student_frozen(false);
    let stage1 = stage1?;
    let after = hybrid.student_fingerprint();
    if after != before {
        return Err(TrainError::Contract("student parameters changed while frozen".into()));
    }
    let stage2 = fit(hybrid, train, val, &config.stage2, Phase::HybridStage2, &[], Select::BestF1)?;
    Ok(HybridRuns { stage1, stage2, student_fingerprint_before: before, student_fingerprint_after_stage1: after })
}
