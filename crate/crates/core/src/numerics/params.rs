use sha2::{Digest, Sha256};

use super::{Gradients, NumericsError, Tape, Tensor, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    /// Frozen parameters are bound as constants and skipped by the optimizer.
    pub frozen: bool,
    /// Included in the L2 penalty.
    pub regularized: bool,
    /// Rows of a 2-D parameter whose gradient is always discarded (e.g. PAD).
    pub pinned_rows: Vec<usize>,
}

/// Named, ordered collection of model parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

/// Tape vars for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, regularized: bool) -> ParamId {
        self.params.push(Param { name: name.into(), tensor, frozen: false, regularized, pinned_rows: Vec::new() });
        ParamId(self.params.len() - 1)
    }

    pub fn pin_row(&mut self, id: ParamId, row: usize) {
        self.params[id.0].pinned_rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Freezes or unfreezes every parameter whose name starts with `prefix`.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.frozen = frozen;
        }
    }

    /// Records every parameter on `tape`; frozen ones become constants.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Bound {
        let vars = self.params.iter().map(|p| if p.frozen { tape.constant_ref(&p.tensor) } else { tape.param(&p.tensor) }).collect();
        Bound { vars }
    }

    /// Records every parameter as a constant (no gradients), for inference.
    pub fn bind_constants<'a>(&'a self, tape: &mut Tape<'a>) -> Bound {
        Bound { vars: self.params.iter().map(|p| tape.constant_ref(&p.tensor)).collect() }
    }

    /// Vars of trainable parameters flagged for L2 regularization.
    pub fn regularized_vars(&self, bound: &Bound) -> Vec<Var> {
        self.params.iter().zip(&bound.vars).filter(|(p, _)| p.regularized && !p.frozen).map(|(_, &v)| v).collect()
    }

    /// Copies gradients for every trainable parameter out of `grads`.
    ///
    /// Parameters that did not influence the loss receive a zero gradient.
    pub fn absorb(&mut self, bound: &Bound, grads: &Gradients) -> Result<(), NumericsError> {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            if p.frozen {
                continue;
            }
            let mut g = match grads.get(v)? {
                Some(g) => g.to_vec(),
                None => vec![0.0; p.tensor.len()],
            };
            if !p.pinned_rows.is_empty() {
                let cols = *p.tensor.shape().last().unwrap_or(&1);
                for &r in &p.pinned_rows {
                    g[r * cols..(r + 1) * cols].iter_mut().for_each(|x| *x = 0.0);
                }
            }
            p.tensor.accumulate_grad(&g)?;
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.clear_grad());
    }

    /// SHA-256 over names, shapes and exact value bits of matching parameters.
    pub fn fingerprint(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| p.name.starts_with(prefix)) {
            h.update(p.name.as_bytes());
            for &d in p.tensor.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in p.tensor.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
