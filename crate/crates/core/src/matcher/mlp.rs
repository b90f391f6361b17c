use rand::Rng;

use crate::numerics::{Bound, ParamId, ParamStore, Tape, Tensor, Var};

use super::MatcherError;

/// Glorot-uniform `[fan_in, fan_out]` weight matrix.
pub(crate) fn glorot<R: Rng + ?Sized>(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape, data).expect("glorot shape")
}

/// Stack of dense layers `h ← act(h·W + b)`.
#[derive(Clone, Debug)]
pub(crate) struct Mlp {
    pub layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, input: usize, sizes: &[usize], rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(sizes.len());
        let mut fan_in = input;
        for (i, &out) in sizes.iter().enumerate() {
            let w = store.add(format!("{prefix}.{i}.weight"), glorot(vec![fan_in, out], fan_in, out, rng), true);
            let b = store.add(format!("{prefix}.{i}.bias"), Tensor::zeros(vec![out]), false);
            layers.push((w, b));
            fan_in = out;
        }
        Self { layers }
    }

    /// ReLU (and dropout) after every layer, or after all but the last when
    /// `linear_output` is set.
    pub fn forward<'a, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'a>,
        bound: &Bound,
        mut h: Var,
        linear_output: bool,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Var, MatcherError> {
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.matmul(h, bound.get(w))?;
            h = tape.add_row(h, bound.get(b))?;
            if linear_output && i + 1 == self.layers.len() {
                break;
            }
            h = tape.relu(h)?;
            h = tape.dropout(h, dropout, rng)?;
        }
        Ok(h)
    }
}
