//! Stage one: tf-idf weighted average word vectors and cosine top-K.

use std::cmp::Ordering;
use std::collections::HashSet;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::numerics::hex;
use crate::text::{tokenize, EmbeddingTable, TfIdfModel};
use crate::ScenarioId;

#[derive(Debug, Error, PartialEq)]
pub enum CoarseError {
    #[error("vector dimension mismatch: {left} vs {right}")]
    Dimension { left: usize, right: usize },
    #[error("scenario index is empty")]
    EmptyIndex,
    #[error("top-k requires k >= 1")]
    InvalidK,
    #[error("duplicate scenario id {0}")]
    DuplicateScenario(ScenarioId),
}

/// Sentence representation in word-vector space.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceVector {
    pub values: Vec<f64>,
    /// Set when the text had no token with a known vector; `values` is zero.
    pub no_known_tokens: bool,
}

/// Word vectors plus tf-idf statistics used to represent any text.
#[derive(Clone, Debug)]
pub struct CoarseRanker {
    embeddings: EmbeddingTable,
    tfidf: TfIdfModel,
}

impl CoarseRanker {
    pub fn new(embeddings: EmbeddingTable, tfidf: TfIdfModel) -> Self {
        Self { embeddings, tfidf }
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn embeddings(&self) -> &EmbeddingTable {
        &self.embeddings
    }

    pub fn tfidf(&self) -> &TfIdfModel {
        &self.tfidf
    }

    pub fn represent(&self, text: &str) -> SentenceVector {
        self.represent_tokens(&tokenize(text))
    }

    /// Tf-idf weighted average of the vectors of known tokens. Unknown
    /// tokens are dropped from both the sum and the normalizer.
    pub fn represent_tokens(&self, tokens: &[String]) -> SentenceVector {
        let dim = self.embeddings.dim();
        let weighted: Vec<(&[f64], f64)> =
            self.tfidf.weights(tokens).into_iter().filter_map(|(t, w)| self.embeddings.vector(t).map(|v| (v, w))).collect();
        let total: f64 = weighted.iter().map(|&(_, w)| w).sum();
        let mut values = vec![0.0; dim];
        if weighted.is_empty() || total <= 0.0 {
            return SentenceVector { values, no_known_tokens: true };
        }
        for (v, w) in weighted {
            let share = w / total;
            values.iter_mut().zip(v).for_each(|(o, x)| *o += share * x);
        }
        SentenceVector { values, no_known_tokens: false }
    }
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(u: &[f64], s: &[f64]) -> Result<f64, CoarseError> {
    if u.len() != s.len() {
        return Err(CoarseError::Dimension { left: u.len(), right: s.len() });
    }
    let dot: f64 = u.iter().zip(s).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ns = s.iter().map(|b| b * b).sum::<f64>().sqrt();
    if nu == 0.0 || ns == 0.0 {
        return Ok(0.0);
    }
    // adding 0.0 turns -0.0 into 0.0 so that zero scores tie on id
    Ok((dot / (nu * ns)).clamp(-1.0, 1.0) + 0.0)
}

/// Sorts by similarity descending, then scenario id ascending.
pub fn rank_order(a: &(ScenarioId, f64), b: &(ScenarioId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

#[derive(Clone, Debug)]
pub struct IndexEntry {
    pub id: ScenarioId,
    pub description: String,
    pub vector: SentenceVector,
}

/// Precomputed scenario representations for one catalog + embedding pair.
#[derive(Clone, Debug)]
pub struct ScenarioIndex {
    stamp: String,
    entries: Vec<IndexEntry>,
}

impl ScenarioIndex {
    pub fn build<'a, I>(ranker: &CoarseRanker, catalog: I) -> Result<Self, CoarseError>
    where
        I: IntoIterator<Item = (&'a ScenarioId, &'a str)>,
    {
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        let mut h = Sha256::new();
        h.update(ranker.embeddings.vocab().fingerprint().as_bytes());
        for v in ranker.embeddings.data() {
            h.update(v.to_bits().to_le_bytes());
        }
        for (id, description) in catalog {
            if !seen.insert(id.clone()) {
                return Err(CoarseError::DuplicateScenario(id.clone()));
            }
            h.update(id.as_str().as_bytes());
            h.update([0]);
            h.update(description.as_bytes());
            h.update([0]);
            entries.push(IndexEntry { id: id.clone(), description: description.to_string(), vector: ranker.represent(description) });
        }
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self { stamp: hex(&h.finalize()), entries })
    }

    /// Changes whenever the embeddings or the catalog contents change.
    pub fn stamp(&self) -> &str {
        &self.stamp
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// The `k` most similar scenarios to `utterance`, best first.
    pub fn top_k(&self, ranker: &CoarseRanker, utterance: &str, k: usize) -> Result<Vec<(ScenarioId, f64)>, CoarseError> {
        self.top_k_vector(&ranker.represent(utterance).values, k)
    }

    pub fn top_k_vector(&self, query: &[f64], k: usize) -> Result<Vec<(ScenarioId, f64)>, CoarseError> {
        if k == 0 {
            return Err(CoarseError::InvalidK);
        }
        if self.entries.is_empty() {
            return Err(CoarseError::EmptyIndex);
        }
        let mut scored =
            self.entries.iter().map(|e| cosine(query, &e.vector.values).map(|s| (e.id.clone(), s))).collect::<Result<Vec<_>, _>>()?;
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, rank_order);
            scored.truncate(k);
        }
        scored.sort_by(rank_order);
        Ok(scored)
    }
}
