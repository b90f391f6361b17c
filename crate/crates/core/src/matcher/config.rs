use serde::{Deserialize, Serialize};

use super::aspects::AspectSchema;
use super::MatcherError;

/// Shape and regularization of the TextCNN matcher.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudentConfig {
    pub kernel_widths: Vec<usize>,
    /// Output channels per kernel width (`d_o`).
    pub channels: usize,
    /// Fixed sequence length `N`.
    pub seq_len: usize,
    /// Token embedding dimension `d`.
    pub embed_dim: usize,
    /// Hidden sizes of the interaction MLP; the last one is `dim(m)`.
    pub mlp_hidden: Vec<usize>,
    pub dropout: f64,
    pub l2: f64,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            kernel_widths: vec![2, 3, 4, 5],
            channels: 64,
            seq_len: 16,
            embed_dim: 64,
            mlp_hidden: vec![512, 256, 128],
            dropout: 0.2,
            l2: 0.05,
        }
    }
}

impl StudentConfig {
    pub fn validate(&self) -> Result<(), MatcherError> {
        let bad = |m: String| Err(MatcherError::Config(m));
        if self.kernel_widths.is_empty() {
            return bad("at least one kernel width is required".into());
        }
        if let Some(&w) = self.kernel_widths.iter().find(|&&w| w == 0 || w > self.seq_len) {
            return bad(format!("kernel width {w} must be in 1..={}", self.seq_len));
        }
        if self.channels == 0 || self.embed_dim == 0 || self.seq_len == 0 {
            return bad("channels, embed_dim and seq_len must be positive".into());
        }
        if self.mlp_hidden.is_empty() || self.mlp_hidden.contains(&0) {
            return bad("the interaction MLP needs at least one non-empty layer".into());
        }
        if !(0.0..1.0).contains(&self.dropout) || self.l2 < 0.0 {
            return bad(format!("dropout {} or l2 {} out of range", self.dropout, self.l2));
        }
        Ok(())
    }

    /// `2·k·d_o`: length of the pooled representation of one text.
    pub fn repr_dim(&self) -> usize {
        2 * self.kernel_widths.len() * self.channels
    }

    /// `8·k·d_o`: length of the interaction input.
    pub fn interaction_dim(&self) -> usize {
        4 * self.repr_dim()
    }

    /// `dim(m)`.
    pub fn feature_dim(&self) -> usize {
        *self.mlp_hidden.last().expect("validated")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridConfig {
    pub aspect_schema: AspectSchema,
    /// Hidden sizes of the aspect DNN; the last one is `dim(m̄)`.
    pub aspect_hidden: Vec<usize>,
    /// Hidden sizes of the fusion MLP before its single-logit output.
    pub fusion_hidden: Vec<usize>,
    pub dropout: f64,
    pub l2: f64,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self { aspect_schema: AspectSchema::default(), aspect_hidden: vec![32, 32], fusion_hidden: vec![64], dropout: 0.2, l2: 0.05 }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<(), MatcherError> {
        if self.aspect_hidden.is_empty() || self.aspect_hidden.contains(&0) || self.fusion_hidden.contains(&0) {
            return Err(MatcherError::Config("aspect and fusion layers must be non-empty".into()));
        }
        if self.aspect_schema.width() == 0 {
            return Err(MatcherError::Config("aspect schema has no fields".into()));
        }
        Ok(())
    }

    pub fn aspect_dim(&self) -> usize {
        *self.aspect_hidden.last().expect("validated")
    }
}
