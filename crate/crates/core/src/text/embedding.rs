use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::Rng;

use super::vocab::{pad_ids, Vocabulary, PAD, PAD_TOKEN, UNK, UNK_TOKEN};
use super::TextError;
use crate::numerics::Tensor;

/// `V × dim` word vectors aligned with a [`Vocabulary`]. The PAD row is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    vocab: Vocabulary,
    dim: usize,
    data: Vec<f64>,
}

/// A fixed-length embedded sequence and its real-position mask.
#[derive(Clone, Debug)]
pub struct EmbeddedSequence {
    pub values: Tensor,
    pub mask: Vec<bool>,
    /// True when no position is real (empty input).
    pub all_pad: bool,
}

impl EmbeddingTable {
    pub fn zeros(vocab: Vocabulary, dim: usize) -> Self {
        let data = vec![0.0; vocab.len() * dim];
        Self { vocab, dim, data }
    }

    /// Uniform `(-scale, scale)` initialization; PAD stays zero.
    pub fn random<R: Rng + ?Sized>(vocab: Vocabulary, dim: usize, scale: f64, rng: &mut R) -> Self {
        let mut t = Self::zeros(vocab, dim);
        for v in t.data[dim..].iter_mut() {
            *v = rng.gen_range(-scale..scale);
        }
        t
    }

    pub(crate) fn from_parts(vocab: Vocabulary, dim: usize, mut data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), vocab.len() * dim);
        data[..dim].iter_mut().for_each(|v| *v = 0.0);
        Self { vocab, dim, data }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    /// Vector of a non-reserved token present in the table.
    pub fn vector(&self, token: &str) -> Option<&[f64]> {
        self.vocab.known_id(token).map(|id| self.row(id))
    }

    /// Looks up `tokens`, truncating or PAD-extending to `len` rows.
    pub fn embed_sequence<S: AsRef<str>>(&self, tokens: &[S], len: usize) -> EmbeddedSequence {
        let (ids, mask) = pad_ids(&self.vocab.encode(tokens), len.max(1));
        let mut values = Vec::with_capacity(ids.len() * self.dim);
        for &id in &ids {
            values.extend_from_slice(self.row(id));
        }
        let all_pad = !mask.iter().any(|&m| m);
        let values = Tensor::new(vec![ids.len(), self.dim], values).expect("rows × dim");
        EmbeddedSequence { values, mask, all_pad }
    }

    /// Parses the textual word-vector format: a `V dim` header followed by
    /// `token v1 … v_dim` lines.
    pub fn parse<R: Read>(reader: R) -> Result<Self, TextError> {
        let mut lines = BufReader::new(reader).lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line?,
            None => return Err(TextError::Parse { line: 1, message: "missing header".into() }),
        };
        let mut head = header.split_whitespace();
        let parse_usize = |s: Option<&str>| s.and_then(|s| s.parse::<usize>().ok());
        let (count, dim) = match (parse_usize(head.next()), parse_usize(head.next()), head.next()) {
            (Some(c), Some(d), None) if d > 0 => (c, d),
            _ => return Err(TextError::Parse { line: 1, message: format!("bad header {header:?}") }),
        };
        let mut words = Vec::with_capacity(count);
        let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(count);
        for (i, line) in lines {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let word = fields.next().unwrap().to_string();
            let vec: Result<Vec<f64>, _> = fields.map(str::parse::<f64>).collect();
            let vec = vec.map_err(|e| TextError::Parse { line: lineno, message: e.to_string() })?;
            if vec.len() != dim {
                return Err(TextError::Parse { line: lineno, message: format!("expected {dim} components, found {}", vec.len()) });
            }
            if vec.iter().any(|v| !v.is_finite()) {
                return Err(TextError::Parse { line: lineno, message: "non-finite component".into() });
            }
            words.push(word);
            vectors.push(vec);
        }
        if words.len() != count {
            return Err(TextError::Parse {
                line: words.len() + 2,
                message: format!("header declares {count} vectors, found {}", words.len()),
            });
        }
        let vocab = Vocabulary::from_tokens(words.iter().filter(|w| *w != PAD_TOKEN && *w != UNK_TOKEN).cloned());
        let mut table = Self::zeros(vocab, dim);
        for (w, v) in words.iter().zip(vectors) {
            if w == PAD_TOKEN {
                continue;
            }
            let id = if w == UNK_TOKEN { UNK } else { table.vocab.id(w) };
            table.data[id * dim..(id + 1) * dim].copy_from_slice(&v);
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, TextError> {
        Self::parse(std::fs::File::open(path)?)
    }

    /// Writes the textual word-vector format. PAD is implicit; UNK is
    /// written only when its row is non-zero.
    pub fn to_text(&self) -> String {
        let write_unk = self.row(UNK).iter().any(|&v| v != 0.0);
        let rows: Vec<usize> = (0..self.vocab.len()).filter(|&i| i > UNK || (i == UNK && write_unk)).collect();
        let mut out = format!("{} {}\n", rows.len(), self.dim);
        for id in rows {
            out.push_str(self.vocab.token(id).unwrap());
            for v in self.row(id) {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), TextError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn pad_row_is_zero(&self) -> bool {
        self.row(PAD).iter().all(|&v| v == 0.0)
    }
}
