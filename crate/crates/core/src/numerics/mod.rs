//! Dense tensors, tape-based reverse-mode differentiation and Adam.

mod adam;
mod gemm;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamState, Schedule};
pub use params::{Bound, Param, ParamId, ParamStore};
pub use tape::{Gradients, Mode, Tape, Var};
pub use tensor::Tensor;

pub(crate) use params::hex;

use thiserror::Error;

/// Predictions are clamped to `[BCE_EPSILON, 1 - BCE_EPSILON]` inside BCE.
pub const BCE_EPSILON: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("shape {shape:?} does not describe {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("pooling over a sequence with no unmasked positions")]
    EmptySequence,
    #[error("variable belongs to a cleared or different tape")]
    StaleVar,
    #[error("expected a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("parameter {param} has no gradient; run backward before stepping")]
    MissingGradient { param: String },
}

/// Binary cross-entropy of one prediction against a (possibly soft) target.
pub fn bce(target: f64, prediction: f64) -> f64 {
    let p = prediction.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_closed_forms() {
        let ln2 = std::f64::consts::LN_2;
        assert!((bce(0.5, 0.5) - ln2).abs() < 1e-15);
        assert!((bce(1.0, 0.5) - ln2).abs() < 1e-15);
        assert!(bce(1.0, 1.0 - BCE_EPSILON) < 1e-6);
        assert!(bce(0.0, 1.0).is_finite());
        assert!(bce(1.0, 0.0).is_finite());
    }
}
