use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{Bound, ParamStore, Tape, Var, BCE_EPSILON};
use crate::text::{EmbeddingTable, Vocabulary};

use super::batch::PairBatch;
use super::student::StudentModel;
use super::{Matcher, MatcherError, StudentConfig};

/// Output channels of the bundled wide teachers.
pub const TEACHER_CHANNELS: usize = 128;

/// Coarse cost bucket a panel member advertises to schedulers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyClass {
    Fast,
    Moderate,
    Heavy,
}

/// Anything that can score an (utterance, scenario) token pair.
pub trait TeacherModel: Send + Sync {
    fn id(&self) -> &str;
    fn latency_class(&self) -> LatencyClass;

    /// Eval-mode match probability, strictly inside (0, 1).
    fn score(&self, utterance: &[String], scenario: &[String]) -> Result<f64, MatcherError>;

    fn score_pairs(&self, pairs: &[(&[String], &[String])]) -> Result<Vec<f64>, MatcherError> {
        pairs.iter().map(|(u, s)| self.score(u, s)).collect()
    }
}

/// Kernel sets of the three bundled teachers, keyed by teacher id. Other
/// settings are inherited from `base`; the sequence length is raised if a
/// kernel would not fit.
pub fn bundled_teacher_configs(base: &StudentConfig) -> Vec<(String, StudentConfig)> {
    [vec![1, 2, 3], vec![2, 3, 4, 5], vec![3, 4, 5, 6, 7]]
        .into_iter()
        .map(|widths| {
            let id = format!("wide-k{}", widths.iter().map(usize::to_string).collect::<String>());
            let seq_len = base.seq_len.max(*widths.iter().max().expect("non-empty"));
            let config = StudentConfig { kernel_widths: widths, channels: TEACHER_CHANNELS, seq_len, ..base.clone() };
            (id, config)
        })
        .collect()
}

/// High-capacity student-architecture stand-in for a pretrained teacher.
#[derive(Clone, Debug)]
pub struct WideTeacher {
    pub(crate) id: String,
    pub(crate) model: StudentModel,
}

impl WideTeacher {
    pub fn new<R: Rng + ?Sized>(
        id: impl Into<String>,
        config: StudentConfig,
        vocab: Vocabulary,
        pretrained: Option<&EmbeddingTable>,
        rng: &mut R,
    ) -> Result<Self, MatcherError> {
        Ok(Self { id: id.into(), model: StudentModel::with_prefix("teacher", config, vocab, pretrained, rng)? })
    }

    pub fn config(&self) -> &StudentConfig {
        self.model.config()
    }

    pub fn model(&self) -> &StudentModel {
        &self.model
    }
}

fn open_interval(p: f64) -> f64 {
    p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON)
}

impl TeacherModel for WideTeacher {
    fn id(&self) -> &str {
        &self.id
    }

    fn latency_class(&self) -> LatencyClass {
        LatencyClass::Heavy
    }

    fn score(&self, utterance: &[String], scenario: &[String]) -> Result<f64, MatcherError> {
        Ok(open_interval(self.model.predict(utterance, scenario)?))
    }

    fn score_pairs(&self, pairs: &[(&[String], &[String])]) -> Result<Vec<f64>, MatcherError> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let batch = PairBatch::from_tokens(self.model.vocab(), self.model.config().seq_len, pairs)?;
        Ok(self.model.predict_batch(&batch)?.into_iter().map(open_interval).collect())
    }
}

impl Matcher for WideTeacher {
    fn params(&self) -> &ParamStore {
        self.model.params()
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        self.model.params_mut()
    }

    fn vocab(&self) -> &Vocabulary {
        self.model.vocab()
    }

    fn seq_len(&self) -> usize {
        self.model.seq_len()
    }

    fn l2(&self) -> f64 {
        self.model.l2()
    }

    fn forward<'a>(&'a self, tape: &mut Tape<'a>, bound: &Bound, batch: &PairBatch, rng: &mut ChaCha8Rng) -> Result<Var, MatcherError> {
        self.model.forward(tape, bound, batch, rng)
    }
}
