//! TextCNN matcher: shared encoder, interaction MLP and logit head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::{Bound, Mode, ParamId, ParamStore, Tape, Tensor, Var};
use crate::text::{pad_ids, EmbeddingTable, Vocabulary, PAD};

use super::batch::PairBatch;
use super::mlp::{glorot, Mlp};
use super::{Matcher, MatcherError, StudentConfig};

/// Parameter layout of one TextCNN matcher inside a [`ParamStore`].
///
/// Utterance and scenario texts share the embedding table and encoder.
#[derive(Clone, Debug)]
pub(crate) struct StudentNet {
    pub config: StudentConfig,
    pub embedding: ParamId,
    pub convs: Vec<(ParamId, ParamId)>,
    pub mlp: Mlp,
    pub head: Mlp,
}

impl StudentNet {
    pub fn init<R: Rng + ?Sized>(
        config: &StudentConfig,
        store: &mut ParamStore,
        prefix: &str,
        vocab: &Vocabulary,
        pretrained: Option<&EmbeddingTable>,
        rng: &mut R,
    ) -> Result<Self, MatcherError> {
        config.validate()?;
        let d = config.embed_dim;
        let mut table = vec![0.0; vocab.len() * d];
        for v in table[d..].iter_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
        if let Some(pre) = pretrained.filter(|p| p.dim() == d) {
            for (id, tok) in vocab.tokens().iter().enumerate().skip(PAD + 1) {
                if let Some(v) = pre.vector(tok) {
                    table[id * d..(id + 1) * d].copy_from_slice(v);
                }
            }
        }
        let embedding = store.add(format!("{prefix}.embedding"), Tensor::new(vec![vocab.len(), d], table)?, false);
        store.pin_row(embedding, PAD);
        let mut convs = Vec::with_capacity(config.kernel_widths.len());
        for &w in &config.kernel_widths {
            let k = glorot(vec![w, d, config.channels], w * d, config.channels, rng);
            let k = store.add(format!("{prefix}.conv{w}.kernel"), k, true);
            let b = store.add(format!("{prefix}.conv{w}.bias"), Tensor::zeros(vec![config.channels]), false);
            convs.push((k, b));
        }
        let mlp = Mlp::init(store, &format!("{prefix}.mlp"), config.interaction_dim(), &config.mlp_hidden, rng);
        let head = Mlp::init(store, &format!("{prefix}.head"), config.feature_dim(), &[1], rng);
        Ok(Self { config: config.clone(), embedding, convs, mlp, head })
    }

    /// Pooled representation `[max_1..max_k, mean_1..mean_k]`, shape `[batch, 2·k·d_o]`.
    pub fn encode<'a>(&self, tape: &mut Tape<'a>, bound: &Bound, ids: &[usize], mask: &[bool], batch: usize) -> Result<Var, MatcherError> {
        let emb = tape.gather(bound.get(self.embedding), ids, &[batch, self.config.seq_len])?;
        let mut maxes = Vec::with_capacity(2 * self.convs.len());
        let mut means = Vec::with_capacity(self.convs.len());
        for &(k, b) in &self.convs {
            let c = tape.conv1d(emb, bound.get(k), bound.get(b))?;
            let r = tape.relu(c)?;
            maxes.push(tape.max_over_time(r, mask)?);
            means.push(tape.mean_over_time(r, mask)?);
        }
        maxes.extend(means);
        Ok(tape.concat(&maxes)?)
    }

    /// `m = MLP([u; s; u⊙s; (u−s)²])`.
    pub fn interact<'a, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'a>,
        bound: &Bound,
        u: Var,
        s: Var,
        rng: &mut R,
    ) -> Result<Var, MatcherError> {
        let x = interaction_input(tape, u, s)?;
        self.mlp.forward(tape, bound, x, false, self.config.dropout, rng)
    }

    /// Matching feature `m` for a batch of pairs.
    pub fn features<'a, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'a>,
        bound: &Bound,
        batch: &PairBatch,
        rng: &mut R,
    ) -> Result<Var, MatcherError> {
        if batch.seq_len != self.config.seq_len {
            return Err(MatcherError::Config(format!(
                "batch sequence length {} differs from model length {}",
                batch.seq_len, self.config.seq_len
            )));
        }
        let u = self.encode(tape, bound, &batch.u_ids, &batch.u_mask, batch.size)?;
        let s = self.encode(tape, bound, &batch.s_ids, &batch.s_mask, batch.size)?;
        self.interact(tape, bound, u, s, rng)
    }

    pub fn encode_texts<S: AsRef<str>, T: AsRef<[S]>>(
        &self,
        store: &ParamStore,
        vocab: &Vocabulary,
        texts: &[T],
    ) -> Result<Vec<Vec<f64>>, MatcherError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let n = self.config.seq_len;
        let mut ids = Vec::with_capacity(texts.len() * n);
        let mut mask = Vec::with_capacity(texts.len() * n);
        for t in texts {
            let enc = vocab.encode(t.as_ref());
            if enc.is_empty() {
                return Err(MatcherError::EmptyText);
            }
            let (i, m) = pad_ids(&enc, n);
            ids.extend(i);
            mask.extend(m);
        }
        let mut tape = Tape::new(Mode::Eval);
        let bound = store.bind_constants(&mut tape);
        let r = self.encode(&mut tape, &bound, &ids, &mask, texts.len())?;
        let dim = self.config.repr_dim();
        Ok(tape.value(r)?.chunks(dim).map(<[f64]>::to_vec).collect())
    }

    /// `m` for one utterance representation against each candidate's.
    pub fn features_encoded<'a, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'a>,
        bound: &Bound,
        u: &[f64],
        candidates: &[&[f64]],
        rng: &mut R,
    ) -> Result<Var, MatcherError> {
        let dim = self.config.repr_dim();
        if u.len() != dim {
            return Err(MatcherError::Dimension { left: vec![u.len()], right: vec![dim] });
        }
        if let Some(c) = candidates.iter().find(|c| c.len() != dim) {
            return Err(MatcherError::Dimension { left: vec![c.len()], right: vec![dim] });
        }
        let k = candidates.len();
        let uu = tape.constant(Tensor::new(vec![k, dim], u.repeat(k))?);
        let ss = tape.constant(Tensor::new(vec![k, dim], candidates.concat())?);
        self.interact(tape, bound, uu, ss, rng)
    }

    /// Logit `W·m + b`, shape `[batch, 1]`.
    pub fn logit<'a, R: Rng + ?Sized>(&self, tape: &mut Tape<'a>, bound: &Bound, m: Var, rng: &mut R) -> Result<Var, MatcherError> {
        self.head.forward(tape, bound, m, true, 0.0, rng)
    }
}

/// `x = [u; s; u⊙s; (u−s)²]` along the last axis.
pub fn interaction_input(tape: &mut Tape<'_>, u: Var, s: Var) -> Result<Var, MatcherError> {
    let (su, ss) = (tape.shape(u)?.to_vec(), tape.shape(s)?.to_vec());
    if su != ss {
        return Err(MatcherError::Dimension { left: su, right: ss });
    }
    let prod = tape.mul(u, s)?;
    let diff = tape.sub(u, s)?;
    let sq = tape.square(diff)?;
    Ok(tape.concat(&[u, s, prod, sq])?)
}

pub(crate) fn eval_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

/// The distilled TextCNN matcher with its own parameters and vocabulary.
#[derive(Clone, Debug)]
pub struct StudentModel {
    pub(crate) net: StudentNet,
    pub(crate) store: ParamStore,
    pub(crate) vocab: Vocabulary,
}

pub const STUDENT_PREFIX: &str = "student";

impl StudentModel {
    pub fn new<R: Rng + ?Sized>(
        config: StudentConfig,
        vocab: Vocabulary,
        pretrained: Option<&EmbeddingTable>,
        rng: &mut R,
    ) -> Result<Self, MatcherError> {
        Self::with_prefix(STUDENT_PREFIX, config, vocab, pretrained, rng)
    }

    pub(crate) fn with_prefix<R: Rng + ?Sized>(
        prefix: &str,
        config: StudentConfig,
        vocab: Vocabulary,
        pretrained: Option<&EmbeddingTable>,
        rng: &mut R,
    ) -> Result<Self, MatcherError> {
        let mut store = ParamStore::new();
        let net = StudentNet::init(&config, &mut store, prefix, &vocab, pretrained, rng)?;
        Ok(Self { net, store, vocab })
    }

    pub fn config(&self) -> &StudentConfig {
        &self.net.config
    }

    pub fn repr_dim(&self) -> usize {
        self.net.config.repr_dim()
    }

    pub fn interaction_dim(&self) -> usize {
        self.net.config.interaction_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.net.config.feature_dim()
    }

    /// Eval-mode representation `ũ` of one token sequence.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<f64>, MatcherError> {
        Ok(self.encode_many(&[tokens])?.remove(0))
    }

    /// Eval-mode representations for several texts in one batch.
    pub fn encode_many<S: AsRef<str>, T: AsRef<[S]>>(&self, texts: &[T]) -> Result<Vec<Vec<f64>>, MatcherError> {
        self.net.encode_texts(&self.store, &self.vocab, texts)
    }

    /// Eval-mode matching feature `m` for precomputed representations.
    pub fn interact(&self, u: &[f64], s: &[f64]) -> Result<Vec<f64>, MatcherError> {
        if u.len() != s.len() || u.len() != self.repr_dim() {
            return Err(MatcherError::Dimension { left: vec![u.len()], right: vec![s.len()] });
        }
        let mut tape = Tape::new(Mode::Eval);
        let bound = self.store.bind_constants(&mut tape);
        let u = tape.constant(Tensor::new(vec![1, u.len()], u.to_vec())?);
        let s = tape.constant(Tensor::new(vec![1, s.len()], s.to_vec())?);
        let m = self.net.interact(&mut tape, &bound, u, s, &mut eval_rng())?;
        Ok(tape.value(m)?.to_vec())
    }

    /// Match probability `ŷ_s` for one (utterance, scenario) pair.
    pub fn predict<S: AsRef<str>>(&self, utterance: &[S], scenario: &[S]) -> Result<f64, MatcherError> {
        let batch = PairBatch::from_tokens(&self.vocab, self.net.config.seq_len, &[(utterance, scenario)])?;
        Ok(self.predict_batch(&batch)?[0])
    }

    /// Scores many candidates against one utterance from cached
    /// representations (the scenario side never changes between requests).
    pub fn score_encoded(&self, u: &[f64], candidates: &[&[f64]]) -> Result<Vec<f64>, MatcherError> {
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new(Mode::Eval);
        let bound = self.store.bind_constants(&mut tape);
        let mut rng = eval_rng();
        let m = self.net.features_encoded(&mut tape, &bound, u, candidates, &mut rng)?;
        let logit = self.net.logit(&mut tape, &bound, m, &mut rng)?;
        let p = tape.sigmoid(logit)?;
        Ok(tape.value(p)?.to_vec())
    }

    pub fn param_fingerprint(&self) -> String {
        self.store.fingerprint("")
    }
}

impl Matcher for StudentModel {
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
        self.net.config.seq_len
    }

    fn l2(&self) -> f64 {
        self.net.config.l2
    }

    fn forward<'a>(&'a self, tape: &mut Tape<'a>, bound: &Bound, batch: &PairBatch, rng: &mut ChaCha8Rng) -> Result<Var, MatcherError> {
        let m = self.net.features(tape, bound, batch, rng)?;
        let logit = self.net.logit(tape, bound, m, rng)?;
        Ok(tape.sigmoid(logit)?)
    }
}
