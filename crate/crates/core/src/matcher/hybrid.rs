use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::{Bound, Mode, ParamStore, Tape, Tensor, Var};
use crate::text::Vocabulary;

use super::aspects::AspectFeatureVector;
use super::batch::PairBatch;
use super::mlp::Mlp;
use super::student::{eval_rng, StudentModel, StudentNet};
use super::{HybridConfig, Matcher, MatcherError, StudentConfig, STUDENT_PREFIX};

pub const ASPECT_PREFIX: &str = "aspect";
pub const FUSION_PREFIX: &str = "fusion";

/// Student text path fused with an aspect DNN: `ŷ_h = σ(MLP([m; m̄]))`.
#[derive(Clone, Debug)]
pub struct HybridModel {
    pub(crate) student: StudentNet,
    pub(crate) aspect: Mlp,
    pub(crate) fusion: Mlp,
    pub(crate) config: HybridConfig,
    pub(crate) store: ParamStore,
    pub(crate) vocab: Vocabulary,
}

impl HybridModel {
    /// Copies the student's parameters and adds freshly initialised aspect
    /// and fusion layers.
    pub fn from_student<R: Rng + ?Sized>(student: &StudentModel, config: HybridConfig, rng: &mut R) -> Result<Self, MatcherError> {
        config.validate()?;
        let mut store = student.store.clone();
        store.clear_grads();
        let aspect = Mlp::init(&mut store, ASPECT_PREFIX, config.aspect_schema.width(), &config.aspect_hidden, rng);
        let mut sizes = config.fusion_hidden.clone();
        sizes.push(1);
        let fusion = Mlp::init(&mut store, FUSION_PREFIX, student.feature_dim() + config.aspect_dim(), &sizes, rng);
        Ok(Self { student: student.net.clone(), aspect, fusion, config, store, vocab: student.vocab.clone() })
    }

    pub fn config(&self) -> &HybridConfig {
        &self.config
    }

    pub fn student_config(&self) -> &StudentConfig {
        &self.student.config
    }

    /// Input width of the fusion MLP, `dim(m) + dim(m̄)`.
    pub fn fusion_input_dim(&self) -> usize {
        self.student.config.feature_dim() + self.config.aspect_dim()
    }

    pub fn set_student_frozen(&mut self, frozen: bool) {
        self.store.set_frozen(&format!("{STUDENT_PREFIX}."), frozen);
    }

    /// Fingerprint of the text-path parameters only.
    pub fn student_fingerprint(&self) -> String {
        self.store.fingerprint(&format!("{STUDENT_PREFIX}."))
    }

    pub fn param_fingerprint(&self) -> String {
        self.store.fingerprint("")
    }

    pub fn encode_many<S: AsRef<str>, T: AsRef<[S]>>(&self, texts: &[T]) -> Result<Vec<Vec<f64>>, MatcherError> {
        self.student.encode_texts(&self.store, &self.vocab, texts)
    }

    fn head<'a>(&self, tape: &mut Tape<'a>, bound: &Bound, m: Var, aspects: Var, rng: &mut ChaCha8Rng) -> Result<Var, MatcherError> {
        let m_bar = self.aspect.forward(tape, bound, aspects, false, self.config.dropout, rng)?;
        let joined = tape.concat(&[m, m_bar])?;
        let g = self.fusion.forward(tape, bound, joined, true, self.config.dropout, rng)?;
        Ok(tape.sigmoid(g)?)
    }

    /// Match probability `ŷ_h` for one pair under the given aspects.
    pub fn predict<S: AsRef<str>>(&self, utterance: &[S], scenario: &[S], aspects: &AspectFeatureVector) -> Result<f64, MatcherError> {
        self.config.aspect_schema.check(aspects)?;
        let batch =
            PairBatch::from_tokens(&self.vocab, self.student.config.seq_len, &[(utterance, scenario)])?.with_aspects(aspects.0.clone());
        Ok(self.predict_batch(&batch)?[0])
    }

    /// Scores cached candidate representations against one utterance
    /// representation under one aspect vector.
    pub fn score_encoded(&self, u: &[f64], candidates: &[&[f64]], aspects: &AspectFeatureVector) -> Result<Vec<f64>, MatcherError> {
        self.config.aspect_schema.check(aspects)?;
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new(Mode::Eval);
        let bound = self.store.bind_constants(&mut tape);
        let mut rng = eval_rng();
        let m = self.student.features_encoded(&mut tape, &bound, u, candidates, &mut rng)?;
        let k = candidates.len();
        let a = tape.constant(Tensor::new(vec![k, aspects.0.len()], aspects.0.repeat(k))?);
        let p = self.head(&mut tape, &bound, m, a, &mut rng)?;
        Ok(tape.value(p)?.to_vec())
    }
}

impl Matcher for HybridModel {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn seq_len(&self) -> usize {
        self.student.config.seq_len
    }

    fn l2(&self) -> f64 {
        self.config.l2
    }

    fn forward<'a>(&'a self, tape: &mut Tape<'a>, bound: &Bound, batch: &PairBatch, rng: &mut ChaCha8Rng) -> Result<Var, MatcherError> {
        let width = self.config.aspect_schema.width();
        let aspects =
            batch.aspects.as_ref().ok_or_else(|| MatcherError::Config("hybrid scoring needs aspect features for every pair".into()))?;
        if aspects.len() != batch.size * width {
            return Err(MatcherError::Dimension { left: vec![aspects.len()], right: vec![batch.size, width] });
        }
        let m = self.student.features(tape, bound, batch, rng)?;
        let a = tape.constant(Tensor::new(vec![batch.size, width], aspects.clone())?);
        self.head(tape, bound, m, a, rng)
    }
}
