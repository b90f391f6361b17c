//! JSON checkpoint container.
//!
//! ```text
//! { "format": "ics-checkpoint", "version": 1, "kind": "student" | "teacher" | "hybrid",
//!   "id": optional teacher id, "vocab_fingerprint": sha256 hex,
//!   "vocabulary": { "tokens": [...], "counts": [...] }, "config": {...},
//!   "params": [ { "name", "shape", "data": base64 of little-endian f64 } ] }
//! ```
//!
//! Values are stored bit-exactly, so a reloaded model reproduces the saved
//! model's outputs exactly.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::numerics::{ParamStore, Tensor};
use crate::text::Vocabulary;

use super::hybrid::HybridModel;
use super::student::StudentModel;
use super::teacher::WideTeacher;
use super::{HybridConfig, MatcherError, StudentConfig};

pub const CHECKPOINT_FORMAT: &str = "ics-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Student,
    Teacher,
    Hybrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBlob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub vocab_fingerprint: String,
    pub vocabulary: Vocabulary,
    pub config: Value,
    pub params: Vec<ParamBlob>,
}

#[derive(Serialize, Deserialize)]
struct HybridConfigs {
    student: StudentConfig,
    hybrid: HybridConfig,
}

fn blobs(store: &ParamStore) -> Vec<ParamBlob> {
    store
        .iter()
        .map(|p| {
            let bytes: Vec<u8> = p.tensor.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            ParamBlob { name: p.name.clone(), shape: p.tensor.shape().to_vec(), data: STANDARD.encode(bytes) }
        })
        .collect()
}

fn bad(msg: impl Into<String>) -> MatcherError {
    MatcherError::Checkpoint(msg.into())
}

impl Checkpoint {
    fn new(kind: ModelKind, id: Option<String>, vocab: &Vocabulary, config: Value, store: &ParamStore) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind,
            id,
            vocab_fingerprint: vocab.fingerprint(),
            vocabulary: vocab.clone(),
            config,
            params: blobs(store),
        }
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, MatcherError> {
        let head: Value = serde_json::from_slice(bytes).map_err(|e| bad(format!("parse error: {e}")))?;
        if head.get("format").and_then(Value::as_str) != Some(CHECKPOINT_FORMAT) {
            return Err(bad("not a checkpoint file"));
        }
        match head.get("version").and_then(Value::as_u64) {
            Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
            other => return Err(bad(format!("unsupported version {other:?}, this build reads version {CHECKPOINT_VERSION}"))),
        }
        let ckpt: Self = serde_json::from_value(head).map_err(|e| bad(format!("malformed checkpoint: {e}")))?;
        if ckpt.vocabulary.fingerprint() != ckpt.vocab_fingerprint {
            return Err(bad("embedded vocabulary does not match its recorded fingerprint"));
        }
        Ok(ckpt)
    }

    pub fn read(path: &Path) -> Result<Self, MatcherError> {
        Self::from_slice(&fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), MatcherError> {
        let json = serde_json::to_vec(self).map_err(|e| bad(e.to_string()))?;
        fs::write(path, json)?;
        Ok(())
    }

    fn expect(&self, kind: ModelKind, vocab: Option<&Vocabulary>) -> Result<(), MatcherError> {
        if self.kind != kind {
            return Err(bad(format!("expected a {kind:?} checkpoint, found {:?}", self.kind)));
        }
        if let Some(v) = vocab {
            let expected = v.fingerprint();
            if expected != self.vocab_fingerprint {
                return Err(MatcherError::VocabMismatch { expected, found: self.vocab_fingerprint.clone() });
            }
        }
        Ok(())
    }

    fn config<T: for<'de> Deserialize<'de>>(&self) -> Result<T, MatcherError> {
        serde_json::from_value(self.config.clone()).map_err(|e| bad(format!("config: {e}")))
    }

    /// Overwrites every parameter of `store` with the blob of the same name.
    fn restore(&self, store: &mut ParamStore) -> Result<(), MatcherError> {
        if self.params.len() != store.len() {
            return Err(bad(format!("{} parameter blobs for a model with {}", self.params.len(), store.len())));
        }
        for blob in &self.params {
            let id = store.find(&blob.name).ok_or_else(|| bad(format!("unexpected parameter {}", blob.name)))?;
            let bytes = STANDARD.decode(&blob.data).map_err(|e| bad(format!("{}: {e}", blob.name)))?;
            if bytes.len() % 8 != 0 {
                return Err(bad(format!("{}: truncated data", blob.name)));
            }
            let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let tensor = Tensor::new(blob.shape.clone(), data)?;
            let param = store.get_mut(id);
            if param.tensor.shape() != tensor.shape() {
                return Err(MatcherError::Dimension { left: tensor.shape().to_vec(), right: param.tensor.shape().to_vec() });
            }
            param.tensor = tensor;
        }
        Ok(())
    }
}

fn skeleton_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

fn to_value<T: Serialize>(config: &T) -> Value {
    serde_json::to_value(config).expect("configs serialize")
}

impl StudentModel {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(ModelKind::Student, None, &self.vocab, to_value(self.config()), &self.store)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, vocab: Option<&Vocabulary>) -> Result<Self, MatcherError> {
        ckpt.expect(ModelKind::Student, vocab)?;
        let mut model = Self::new(ckpt.config()?, ckpt.vocabulary.clone(), None, &mut skeleton_rng())?;
        ckpt.restore(&mut model.store)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), MatcherError> {
        self.checkpoint().write(path)
    }

    /// Loads a student checkpoint; with `vocab` set, refuses a checkpoint
    /// built against a different vocabulary.
    pub fn load(path: &Path, vocab: Option<&Vocabulary>) -> Result<Self, MatcherError> {
        Self::from_checkpoint(&Checkpoint::read(path)?, vocab)
    }
}

impl WideTeacher {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(ModelKind::Teacher, Some(self.id.clone()), &self.model.vocab, to_value(self.config()), &self.model.store)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, vocab: Option<&Vocabulary>) -> Result<Self, MatcherError> {
        ckpt.expect(ModelKind::Teacher, vocab)?;
        let id = ckpt.id.clone().ok_or_else(|| bad("teacher checkpoint without id"))?;
        let mut t = Self::new(id, ckpt.config()?, ckpt.vocabulary.clone(), None, &mut skeleton_rng())?;
        ckpt.restore(&mut t.model.store)?;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<(), MatcherError> {
        self.checkpoint().write(path)
    }

    pub fn load(path: &Path, vocab: Option<&Vocabulary>) -> Result<Self, MatcherError> {
        Self::from_checkpoint(&Checkpoint::read(path)?, vocab)
    }
}

impl HybridModel {
    pub fn checkpoint(&self) -> Checkpoint {
        let config = HybridConfigs { student: self.student.config.clone(), hybrid: self.config.clone() };
        Checkpoint::new(ModelKind::Hybrid, None, &self.vocab, to_value(&config), &self.store)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, vocab: Option<&Vocabulary>) -> Result<Self, MatcherError> {
        ckpt.expect(ModelKind::Hybrid, vocab)?;
        let configs: HybridConfigs = ckpt.config()?;
        let mut rng = skeleton_rng();
        let student = StudentModel::new(configs.student, ckpt.vocabulary.clone(), None, &mut rng)?;
        let mut model = Self::from_student(&student, configs.hybrid, &mut rng)?;
        ckpt.restore(&mut model.store)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), MatcherError> {
        self.checkpoint().write(path)
    }

    pub fn load(path: &Path, vocab: Option<&Vocabulary>) -> Result<Self, MatcherError> {
        Self::from_checkpoint(&Checkpoint::read(path)?, vocab)
    }
}
