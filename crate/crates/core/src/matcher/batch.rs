use crate::text::{pad_ids, tokenize, Vocabulary};

use super::MatcherError;

/// Padded id sequences for a batch of (utterance, scenario) pairs.
#[derive(Clone, Debug)]
pub struct PairBatch {
    pub size: usize,
    pub seq_len: usize,
    pub u_ids: Vec<usize>,
    pub u_mask: Vec<bool>,
    pub s_ids: Vec<usize>,
    pub s_mask: Vec<bool>,
    /// Row-major `size × aspect width`, present for hybrid scoring.
    pub aspects: Option<Vec<f64>>,
}

impl PairBatch {
    pub fn from_ids(seq_len: usize, pairs: &[(&[usize], &[usize])]) -> Result<Self, MatcherError> {
        let mut b = Self {
            size: pairs.len(),
            seq_len,
            u_ids: Vec::with_capacity(pairs.len() * seq_len),
            u_mask: Vec::with_capacity(pairs.len() * seq_len),
            s_ids: Vec::with_capacity(pairs.len() * seq_len),
            s_mask: Vec::with_capacity(pairs.len() * seq_len),
            aspects: None,
        };
        if pairs.is_empty() {
            return Err(MatcherError::Config("empty batch".into()));
        }
        for (u, s) in pairs {
            if u.is_empty() || s.is_empty() {
                return Err(MatcherError::EmptyText);
            }
            let (ids, mask) = pad_ids(u, seq_len);
            b.u_ids.extend(ids);
            b.u_mask.extend(mask);
            let (ids, mask) = pad_ids(s, seq_len);
            b.s_ids.extend(ids);
            b.s_mask.extend(mask);
        }
        Ok(b)
    }

    pub fn from_tokens<S: AsRef<str>>(vocab: &Vocabulary, seq_len: usize, pairs: &[(&[S], &[S])]) -> Result<Self, MatcherError> {
        let encoded: Vec<(Vec<usize>, Vec<usize>)> = pairs.iter().map(|(u, s)| (vocab.encode(u), vocab.encode(s))).collect();
        let refs: Vec<(&[usize], &[usize])> = encoded.iter().map(|(u, s)| (u.as_slice(), s.as_slice())).collect();
        Self::from_ids(seq_len, &refs)
    }

    pub fn from_texts(vocab: &Vocabulary, seq_len: usize, pairs: &[(&str, &str)]) -> Result<Self, MatcherError> {
        let toks: Vec<(Vec<String>, Vec<String>)> = pairs.iter().map(|(u, s)| (tokenize(u), tokenize(s))).collect();
        let refs: Vec<(&[String], &[String])> = toks.iter().map(|(u, s)| (u.as_slice(), s.as_slice())).collect();
        Self::from_tokens(vocab, seq_len, &refs)
    }

    pub fn with_aspects(mut self, aspects: Vec<f64>) -> Self {
        self.aspects = Some(aspects);
        self
    }
}
