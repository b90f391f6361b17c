//! Skip-gram with negative sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{Vocabulary, UNK};
use super::{EmbeddingTable, TextError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self { dim: 64, window: 3, negatives: 5, epochs: 5, learning_rate: 0.025, seed: 0 }
    }
}

const UNIGRAM_TABLE: usize = 100_000;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x.clamp(-30.0, 30.0)).exp())
}

/// Trains input vectors over `corpus` with the vocabulary `vocab`.
/// UNK positions are skipped; PAD never appears and its row stays zero.
pub fn train_skipgram(corpus: &[Vec<String>], vocab: &Vocabulary, config: &SkipGramConfig) -> Result<EmbeddingTable, TextError> {
    if config.dim < 2 {
        return Err(TextError::Config(format!("embedding dimension {} must be at least 2", config.dim)));
    }
    let dim = config.dim;
    let v = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sentences: Vec<Vec<usize>> =
        corpus.iter().map(|s| vocab.encode(s).into_iter().filter(|&id| id > UNK).collect::<Vec<_>>()).filter(|s| s.len() > 1).collect();

    // unigram^0.75 sampling table over non-reserved ids
    let weights: Vec<f64> = (0..v).map(|i| if i > UNK { (vocab.count(i).max(1) as f64).powf(0.75) } else { 0.0 }).collect();
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return Err(TextError::Config("skip-gram vocabulary has no real tokens".into()));
    }
    let mut table = Vec::with_capacity(UNIGRAM_TABLE);
    let mut cumulative = 0.0;
    let mut id = 2;
    for i in 0..UNIGRAM_TABLE {
        let target = (i as f64 + 0.5) / UNIGRAM_TABLE as f64 * total;
        while id < v - 1 && cumulative + weights[id] < target {
            cumulative += weights[id];
            id += 1;
        }
        table.push(id);
    }

    let mut input = vec![0.0; v * dim];
    for x in input[2 * dim..].iter_mut() {
        *x = (rng.gen::<f64>() - 0.5) / dim as f64;
    }
    let mut output = vec![0.0; v * dim];
    let total_steps = (config.epochs * sentences.iter().map(Vec::len).sum::<usize>()).max(1);
    let mut done = 0usize;
    let mut grad = vec![0.0; dim];

    for _ in 0..config.epochs {
        for sentence in &sentences {
            for (pos, &center) in sentence.iter().enumerate() {
                let lr = config.learning_rate * (1.0 - done as f64 / total_steps as f64).max(1e-4);
                done += 1;
                let reach = rng.gen_range(1..=config.window.max(1));
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(sentence.len() - 1);
                for (ctx_pos, &context) in sentence.iter().enumerate().take(hi + 1).skip(lo) {
                    if ctx_pos == pos {
                        continue;
                    }
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let w_in = center * dim;
                    for k in 0..=config.negatives {
                        let (target, label) = if k == 0 {
                            (context, 1.0)
                        } else {
                            let t = table[rng.gen_range(0..table.len())];
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let w_out = target * dim;
                        let dot: f64 = (0..dim).map(|j| input[w_in + j] * output[w_out + j]).sum();
                        let g = (label - sigmoid(dot)) * lr;
                        for j in 0..dim {
                            grad[j] += g * output[w_out + j];
                            output[w_out + j] += g * input[w_in + j];
                        }
                    }
                    for j in 0..dim {
                        input[w_in + j] += grad[j];
                    }
                }
            }
        }
    }
    Ok(EmbeddingTable::from_parts(vocab.clone(), dim, input))
}
