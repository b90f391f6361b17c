//! Stage two: the TextCNN student matcher, teacher stand-ins, the
//! multi-aspect hybrid head and checkpoint files.

mod aspects;
mod batch;
mod checkpoint;
mod config;
mod hybrid;
mod mlp;
mod student;
mod teacher;

pub use aspects::{AspectFeatureVector, AspectField, AspectSchema, Attributes};
pub use batch::PairBatch;
pub use checkpoint::{Checkpoint, ModelKind, ParamBlob, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{HybridConfig, StudentConfig};
pub use hybrid::{HybridModel, ASPECT_PREFIX, FUSION_PREFIX};
pub use student::{interaction_input, StudentModel, STUDENT_PREFIX};
pub use teacher::{bundled_teacher_configs, LatencyClass, TeacherModel, WideTeacher, TEACHER_CHANNELS};

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::numerics::{Bound, Mode, NumericsError, ParamStore, Tape, Var};
use crate::text::Vocabulary;

#[derive(Debug, Error)]
pub enum MatcherError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("aspect field {field:?}: {reason}")]
    Schema { field: String, reason: String },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    Dimension { left: Vec<usize>, right: Vec<usize> },
    #[error("text has no tokens")]
    EmptyText,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint was built for vocabulary {found}, active vocabulary is {expected}")]
    VocabMismatch { expected: String, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A trainable pair scorer: parameters, vocabulary and a probability
/// forward pass over a [`PairBatch`].
pub trait Matcher {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn vocab(&self) -> &Vocabulary;
    fn seq_len(&self) -> usize;
    /// L2 coefficient applied to regularized, trainable weights.
    fn l2(&self) -> f64;

    /// Match probabilities, shape `[batch, 1]`. `bound` must come from
    /// binding `self.params()` on `tape`.
    fn forward<'a>(&'a self, tape: &mut Tape<'a>, bound: &Bound, batch: &PairBatch, rng: &mut ChaCha8Rng) -> Result<Var, MatcherError>;

    /// Eval-mode probabilities for every pair of `batch`.
    fn predict_batch(&self, batch: &PairBatch) -> Result<Vec<f64>, MatcherError> {
        let mut tape = Tape::new(Mode::Eval);
        let bound = self.params().bind_constants(&mut tape);
        let p = self.forward(&mut tape, &bound, batch, &mut student::eval_rng())?;
        Ok(tape.value(p)?.to_vec())
    }
}
