//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends one node holding its forward value and enough
//! saved state to compute vector-Jacobian products. `backward` walks the
//! nodes in exact reverse execution order, summing gradient contributions
//! for values used more than once.

use std::borrow::Cow;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::gemm::{gemm, Layout};
use super::{NumericsError, Tensor, BCE_EPSILON};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

fn next_tape_id() -> u64 {
    NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    index: usize,
    tape: u64,
}

/// Whether stochastic layers (dropout) are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    AddRow { x: usize, bias: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Square(usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Concat { parts: Vec<(usize, usize)>, rows: usize, total: usize },
    Gather { table: usize, ids: Vec<usize>, dim: usize },
    Conv1d(Box<ConvSaved>),
    MaxOverTime { input: usize, argmax: Vec<usize> },
    MeanOverTime { input: usize, len: usize, channels: usize, mask: Vec<bool>, counts: Vec<usize> },
    Dropout { input: usize, scale: Vec<f64> },
    Bce { pred: usize, target: Vec<f64> },
    Sum(usize),
    Mean(usize),
    SumSquares { inputs: Vec<usize>, lambda: f64 },
}

#[derive(Debug)]
struct ConvSaved {
    input: usize,
    kernel: usize,
    bias: usize,
    batch: usize,
    len: usize,
    width: usize,
    d_in: usize,
    d_out: usize,
    cols: Vec<f64>,
}

struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [f64]>,
    op: Op,
    needs_grad: bool,
}

/// Records operations for one forward pass.
///
/// Leaves may borrow parameter storage for the tape's lifetime, so a tape is
/// built per batch and dropped before the optimizer mutates parameters.
pub struct Tape<'a> {
    id: u64,
    mode: Mode,
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Result<Option<&[f64]>, NumericsError> {
        if var.tape != self.tape {
            return Err(NumericsError::StaleVar);
        }
        Ok(self.grads.get(var.index).and_then(|g| g.as_deref()))
    }
}

fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> NumericsError {
    NumericsError::Shape { op, left: left.to_vec(), right: right.to_vec() }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'a> Tape<'a> {
    pub fn new(mode: Mode) -> Self {
        Self { id: next_tape_id(), mode, nodes: Vec::new() }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node. Vars issued before the clear become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.id = next_tape_id();
    }

    fn check(&self, var: Var) -> Result<usize, NumericsError> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            return Err(NumericsError::StaleVar);
        }
        Ok(var.index)
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value: Cow::Owned(value), op, needs_grad });
        Var { index: self.nodes.len() - 1, tape: self.id }
    }

    fn node(&self, i: usize) -> &Node<'a> {
        &self.nodes[i]
    }

    /// Trainable leaf borrowing the tensor's storage.
    pub fn param(&mut self, tensor: &'a Tensor) -> Var {
        self.nodes.push(Node { shape: tensor.shape().to_vec(), value: Cow::Borrowed(tensor.data()), op: Op::Leaf, needs_grad: true });
        Var { index: self.nodes.len() - 1, tape: self.id }
    }

    /// Non-trainable leaf borrowing the tensor's storage.
    pub fn constant_ref(&mut self, tensor: &'a Tensor) -> Var {
        self.nodes.push(Node { shape: tensor.shape().to_vec(), value: Cow::Borrowed(tensor.data()), op: Op::Leaf, needs_grad: false });
        Var { index: self.nodes.len() - 1, tape: self.id }
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        let shape = tensor.shape().to_vec();
        self.push(shape, tensor.into_data(), Op::Leaf, false)
    }

    /// Owned leaf that receives a gradient; used by gradient checks.
    pub fn variable(&mut self, tensor: Tensor) -> Var {
        let shape = tensor.shape().to_vec();
        self.push(shape, tensor.into_data(), Op::Leaf, true)
    }

    pub fn value(&self, var: Var) -> Result<&[f64], NumericsError> {
        let i = self.check(var)?;
        Ok(&self.nodes[i].value)
    }

    pub fn shape(&self, var: Var) -> Result<&[usize], NumericsError> {
        let i = self.check(var)?;
        Ok(&self.nodes[i].shape)
    }

    pub fn to_tensor(&self, var: Var) -> Result<Tensor, NumericsError> {
        let i = self.check(var)?;
        Tensor::new(self.nodes[i].shape.clone(), self.nodes[i].value.to_vec())
    }

    pub fn scalar(&self, var: Var) -> Result<f64, NumericsError> {
        let v = self.value(var)?;
        if v.len() != 1 {
            return Err(NumericsError::NotScalar { shape: self.shape(var)?.to_vec() });
        }
        Ok(v[0])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (&self.node(ia).shape, &self.node(ib).shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.node(ia).value, Layout::Normal, &self.node(ib).value, Layout::Normal, 0.0, &mut out);
        let needs = self.node(ia).needs_grad || self.node(ib).needs_grad;
        Ok(self.push(vec![m, n], out, Op::MatMul { a: ia, b: ib, m, k, n }, needs))
    }

    /// Adds a bias vector to every row of `x` (broadcast over leading axes).
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, NumericsError> {
        let (ix, ib) = (self.check(x)?, self.check(bias)?);
        let (sx, sb) = (&self.node(ix).shape, &self.node(ib).shape);
        let cols = *sx.last().unwrap_or(&0);
        if sb.len() != 1 || sb[0] != cols {
            return Err(shape_err("add_row", sx, sb));
        }
        let b = &self.node(ib).value;
        let mut out = self.node(ix).value.to_vec();
        for row in out.chunks_mut(cols) {
            row.iter_mut().zip(b.iter()).for_each(|(o, b)| *o += b);
        }
        let shape = sx.clone();
        let needs = self.node(ix).needs_grad || self.node(ib).needs_grad;
        Ok(self.push(shape, out, Op::AddRow { x: ix, bias: ib }, needs))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(usize, usize) -> Op,
    ) -> Result<Var, NumericsError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (na, nb) = (self.node(ia), self.node(ib));
        if na.shape != nb.shape {
            return Err(shape_err(name, &na.shape, &nb.shape));
        }
        let out: Vec<f64> = na.value.iter().zip(nb.value.iter()).map(|(&x, &y)| f(x, y)).collect();
        let shape = na.shape.clone();
        let needs = na.needs_grad || nb.needs_grad;
        Ok(self.push(shape, out, op(ia, ib), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: impl FnOnce(usize) -> Op) -> Result<Var, NumericsError> {
        let ix = self.check(x)?;
        let n = self.node(ix);
        let out: Vec<f64> = n.value.iter().map(|&v| f(v)).collect();
        let (shape, needs) = (n.shape.clone(), n.needs_grad);
        Ok(self.push(shape, out, op(ix), needs))
    }

    pub fn square(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.unary(x, |v| v * v, Op::Square)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, NumericsError> {
        self.unary(x, |v| v * c, |i| Op::Scale(i, c))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.unary(x, |v| v.max(0.0), Op::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.unary(x, sigmoid, Op::Sigmoid)
    }

    /// Concatenates along the last axis. All leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = *parts.first().ok_or_else(|| NumericsError::Config("concat of zero tensors".into()))?;
        let i0 = self.check(first)?;
        let lead: Vec<usize> = self.node(i0).shape[..self.node(i0).shape.len() - 1].to_vec();
        let rows: usize = lead.iter().product();
        let mut info = Vec::with_capacity(parts.len());
        for &p in parts {
            let ip = self.check(p)?;
            let s = &self.node(ip).shape;
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(shape_err("concat", &self.node(i0).shape, s));
            }
            info.push((ip, *s.last().unwrap()));
        }
        let total: usize = info.iter().map(|&(_, w)| w).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &(ip, w) in &info {
                out.extend_from_slice(&self.node(ip).value[r * w..(r + 1) * w]);
            }
        }
        let needs = info.iter().any(|&(ip, _)| self.node(ip).needs_grad);
        let mut shape = lead;
        shape.push(total);
        Ok(self.push(shape, out, Op::Concat { parts: info, rows, total }, needs))
    }

    /// Looks up rows of a `[V, d]` table. Output shape is `prefix ++ [d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize], prefix: &[usize]) -> Result<Var, NumericsError> {
        let it = self.check(table)?;
        let s = &self.node(it).shape;
        if s.len() != 2 || prefix.iter().product::<usize>() != ids.len() {
            return Err(shape_err("gather", s, prefix));
        }
        let (rows, dim) = (s[0], s[1]);
        if let Some(&bad) = ids.iter().find(|&&id| id >= rows) {
            return Err(NumericsError::Config(format!("gather id {bad} out of range for table with {rows} rows")));
        }
        let table_values = &self.node(it).value;
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            out.extend_from_slice(&table_values[id * dim..(id + 1) * dim]);
        }
        let mut shape = prefix.to_vec();
        shape.push(dim);
        let needs = self.node(it).needs_grad;
        Ok(self.push(shape, out, Op::Gather { table: it, ids: ids.to_vec(), dim }, needs))
    }

    /// Same-length 1-D convolution over the sequence axis.
    ///
    /// `input` is `[N, d]` or `[B, N, d]`, `kernel` is `[width, d, d_out]`,
    /// `bias` is `[d_out]`. Output row `t` sees input rows `t..t+width`, with
    /// rows past the end treated as zeros.
    pub fn conv1d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var, NumericsError> {
        let (ii, ik, ib) = (self.check(input)?, self.check(kernel)?, self.check(bias)?);
        let si = self.node(ii).shape.clone();
        let sk = self.node(ik).shape.clone();
        let sb = self.node(ib).shape.clone();
        let (batch, len, d_in) = match *si.as_slice() {
            [n, d] => (1, n, d),
            [b, n, d] => (b, n, d),
            _ => return Err(shape_err("conv1d", &si, &sk)),
        };
        if sk.len() != 3 || sk[1] != d_in {
            return Err(shape_err("conv1d", &si, &sk));
        }
        let (width, d_out) = (sk[0], sk[2]);
        if sb != [d_out] {
            return Err(shape_err("conv1d bias", &sk, &sb));
        }
        if width > len {
            return Err(NumericsError::Config(format!("conv1d kernel width {width} exceeds sequence length {len}")));
        }
        let x = &self.node(ii).value;
        let wd = width * d_in;
        let mut cols = vec![0.0; batch * len * wd];
        for b in 0..batch {
            for t in 0..len {
                let dst = &mut cols[(b * len + t) * wd..(b * len + t + 1) * wd];
                let avail = width.min(len - t);
                let src = &x[(b * len + t) * d_in..(b * len + t + avail) * d_in];
                dst[..avail * d_in].copy_from_slice(src);
            }
        }
        let mut out = vec![0.0; batch * len * d_out];
        for row in out.chunks_mut(d_out) {
            row.copy_from_slice(&self.node(ib).value);
        }
        gemm(batch * len, wd, d_out, &cols, Layout::Normal, &self.node(ik).value, Layout::Normal, 1.0, &mut out);
        let mut shape = si.clone();
        *shape.last_mut().unwrap() = d_out;
        let needs = self.node(ii).needs_grad || self.node(ik).needs_grad || self.node(ib).needs_grad;
        let saved = ConvSaved { input: ii, kernel: ik, bias: ib, batch, len, width, d_in, d_out, cols };
        Ok(self.push(shape, out, Op::Conv1d(Box::new(saved)), needs))
    }

    fn pool_dims(&self, ix: usize, mask: &[bool]) -> Result<(usize, usize, usize, Vec<usize>), NumericsError> {
        let s = &self.node(ix).shape;
        let (batch, len, channels, out_shape) = match *s.as_slice() {
            [n, c] => (1, n, c, vec![c]),
            [b, n, c] => (b, n, c, vec![b, c]),
            _ => return Err(shape_err("pool", s, &[mask.len()])),
        };
        if mask.len() != batch * len {
            return Err(shape_err("pool mask", s, &[mask.len()]));
        }
        for b in 0..batch {
            if !mask[b * len..(b + 1) * len].iter().any(|&m| m) {
                return Err(NumericsError::EmptySequence);
            }
        }
        Ok((batch, len, channels, out_shape))
    }

    /// Per-channel maximum over unmasked sequence positions.
    pub fn max_over_time(&mut self, x: Var, mask: &[bool]) -> Result<Var, NumericsError> {
        let ix = self.check(x)?;
        let (batch, len, channels, shape) = self.pool_dims(ix, mask)?;
        let v = &self.node(ix).value;
        let mut out = vec![f64::NEG_INFINITY; batch * channels];
        let mut argmax = vec![0usize; batch * channels];
        for b in 0..batch {
            for t in (0..len).filter(|&t| mask[b * len + t]) {
                let row = &v[(b * len + t) * channels..(b * len + t + 1) * channels];
                for c in 0..channels {
                    if row[c] > out[b * channels + c] {
                        out[b * channels + c] = row[c];
                        argmax[b * channels + c] = (b * len + t) * channels + c;
                    }
                }
            }
        }
        let needs = self.node(ix).needs_grad;
        Ok(self.push(shape, out, Op::MaxOverTime { input: ix, argmax }, needs))
    }

    /// Per-channel arithmetic mean over unmasked sequence positions.
    pub fn mean_over_time(&mut self, x: Var, mask: &[bool]) -> Result<Var, NumericsError> {
        let ix = self.check(x)?;
        let (batch, len, channels, shape) = self.pool_dims(ix, mask)?;
        let v = &self.node(ix).value;
        let mut out = vec![0.0; batch * channels];
        let mut counts = vec![0usize; batch];
        for b in 0..batch {
            for t in (0..len).filter(|&t| mask[b * len + t]) {
                counts[b] += 1;
                let row = &v[(b * len + t) * channels..(b * len + t + 1) * channels];
                out[b * channels..(b + 1) * channels].iter_mut().zip(row).for_each(|(o, r)| *o += r);
            }
            let n = counts[b] as f64;
            out[b * channels..(b + 1) * channels].iter_mut().for_each(|o| *o /= n);
        }
        let needs = self.node(ix).needs_grad;
        let op = Op::MeanOverTime { input: ix, len, channels, mask: mask.to_vec(), counts };
        Ok(self.push(shape, out, op, needs))
    }

    /// Inverted dropout: active only in [`Mode::Train`], survivors scaled by `1/(1-p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var, NumericsError> {
        let ix = self.check(x)?;
        if !(0.0..1.0).contains(&p) {
            return Err(NumericsError::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if self.mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.node(ix);
        let scale: Vec<f64> = (0..n.value.len()).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        let out: Vec<f64> = n.value.iter().zip(&scale).map(|(v, s)| v * s).collect();
        let (shape, needs) = (n.shape.clone(), n.needs_grad);
        Ok(self.push(shape, out, Op::Dropout { input: ix, scale }, needs))
    }

    /// Mean binary cross-entropy of `pred` against (possibly soft) `target`.
    pub fn bce(&mut self, pred: Var, target: &[f64]) -> Result<Var, NumericsError> {
        let ip = self.check(pred)?;
        let n = self.node(ip);
        if n.value.len() != target.len() {
            return Err(shape_err("bce", &n.shape, &[target.len()]));
        }
        let total: f64 = n.value.iter().zip(target).map(|(&p, &t)| super::bce(t, p)).sum();
        let mean = total / target.len() as f64;
        let needs = n.needs_grad;
        Ok(self.push(vec![1], vec![mean], Op::Bce { pred: ip, target: target.to_vec() }, needs))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, NumericsError> {
        let ix = self.check(x)?;
        let s: f64 = self.node(ix).value.iter().sum();
        let needs = self.node(ix).needs_grad;
        Ok(self.push(vec![1], vec![s], Op::Sum(ix), needs))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, NumericsError> {
        let ix = self.check(x)?;
        let n = self.node(ix).value.len() as f64;
        let s: f64 = self.node(ix).value.iter().sum::<f64>() / n;
        let needs = self.node(ix).needs_grad;
        Ok(self.push(vec![1], vec![s], Op::Mean(ix), needs))
    }

    /// `lambda * Σ θ²` over every element of every input.
    pub fn l2_penalty(&mut self, params: &[Var], lambda: f64) -> Result<Var, NumericsError> {
        let mut inputs = Vec::with_capacity(params.len());
        let mut total = 0.0;
        for &p in params {
            let ip = self.check(p)?;
            total += self.node(ip).value.iter().map(|v| v * v).sum::<f64>();
            inputs.push(ip);
        }
        let needs = inputs.iter().any(|&i| self.node(i).needs_grad);
        Ok(self.push(vec![1], vec![lambda * total], Op::SumSquares { inputs, lambda }, needs))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        let il = self.check(loss)?;
        if self.nodes[il].value.len() != 1 {
            return Err(NumericsError::NotScalar { shape: self.nodes[il].shape.clone() });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[il] = Some(vec![1.0]);
        for i in (0..=il).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        Ok(Gradients { tape: self.id, grads })
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |j: usize| -> &[f64] { &self.nodes[j].value };
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                if self.wants(a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, Layout::Normal, val(b), Layout::Transposed, 0.0, &mut da);
                    accumulate(grads, a, &da);
                }
                if self.wants(b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, val(a), Layout::Transposed, g, Layout::Normal, 0.0, &mut db);
                    accumulate(grads, b, &db);
                }
            }
            &Op::AddRow { x, bias } => {
                if self.wants(x) {
                    accumulate(grads, x, g);
                }
                if self.wants(bias) {
                    let cols = self.nodes[bias].value.len();
                    let mut db = vec![0.0; cols];
                    for row in g.chunks(cols) {
                        db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                    }
                    accumulate(grads, bias, &db);
                }
            }
            &Op::Add(a, b) => {
                if self.wants(a) {
                    accumulate(grads, a, g);
                }
                if self.wants(b) {
                    accumulate(grads, b, g);
                }
            }
            &Op::Sub(a, b) => {
                if self.wants(a) {
                    accumulate(grads, a, g);
                }
                if self.wants(b) {
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate(grads, b, &neg);
                }
            }
            &Op::Mul(a, b) => {
                if self.wants(a) {
                    let d: Vec<f64> = g.iter().zip(val(b)).map(|(g, y)| g * y).collect();
                    accumulate(grads, a, &d);
                }
                if self.wants(b) {
                    let d: Vec<f64> = g.iter().zip(val(a)).map(|(g, x)| g * x).collect();
                    accumulate(grads, b, &d);
                }
            }
            &Op::Square(x) => {
                let d: Vec<f64> = g.iter().zip(val(x)).map(|(g, x)| 2.0 * g * x).collect();
                accumulate(grads, x, &d);
            }
            &Op::Scale(x, c) => {
                let d: Vec<f64> = g.iter().map(|g| g * c).collect();
                accumulate(grads, x, &d);
            }
            &Op::Relu(x) => {
                let d: Vec<f64> = g.iter().zip(val(x)).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                accumulate(grads, x, &d);
            }
            &Op::Sigmoid(x) => {
                let d: Vec<f64> = g.iter().zip(node.value.iter()).map(|(g, s)| g * s * (1.0 - s)).collect();
                accumulate(grads, x, &d);
            }
            Op::Concat { parts, rows, total } => {
                let mut offset = 0;
                for &(ip, w) in parts {
                    if self.wants(ip) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..*rows {
                            d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        accumulate(grads, ip, &d);
                    }
                    offset += w;
                }
            }
            Op::Gather { table, ids, dim } => {
                let mut d = vec![0.0; self.nodes[*table].value.len()];
                for (k, &id) in ids.iter().enumerate() {
                    d[id * dim..(id + 1) * dim].iter_mut().zip(&g[k * dim..(k + 1) * dim]).for_each(|(d, g)| *d += g);
                }
                accumulate(grads, *table, &d);
            }
            Op::Conv1d(c) => {
                let rows = c.batch * c.len;
                let wd = c.width * c.d_in;
                if self.wants(c.kernel) {
                    let mut dk = vec![0.0; wd * c.d_out];
                    gemm(wd, rows, c.d_out, &c.cols, Layout::Transposed, g, Layout::Normal, 0.0, &mut dk);
                    accumulate(grads, c.kernel, &dk);
                }
                if self.wants(c.bias) {
                    let mut db = vec![0.0; c.d_out];
                    for row in g.chunks(c.d_out) {
                        db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                    }
                    accumulate(grads, c.bias, &db);
                }
                if self.wants(c.input) {
                    let mut dcols = vec![0.0; rows * wd];
                    gemm(rows, c.d_out, wd, g, Layout::Normal, val(c.kernel), Layout::Transposed, 0.0, &mut dcols);
                    let mut dx = vec![0.0; rows * c.d_in];
                    for b in 0..c.batch {
                        for t in 0..c.len {
                            let avail = c.width.min(c.len - t);
                            let src = &dcols[(b * c.len + t) * wd..(b * c.len + t) * wd + avail * c.d_in];
                            let dst = &mut dx[(b * c.len + t) * c.d_in..(b * c.len + t + avail) * c.d_in];
                            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                        }
                    }
                    accumulate(grads, c.input, &dx);
                }
            }
            Op::MaxOverTime { input, argmax } => {
                let mut d = vec![0.0; self.nodes[*input].value.len()];
                for (k, &src) in argmax.iter().enumerate() {
                    d[src] += g[k];
                }
                accumulate(grads, *input, &d);
            }
            Op::MeanOverTime { input, len, channels, mask, counts } => {
                let mut d = vec![0.0; self.nodes[*input].value.len()];
                for (b, &count) in counts.iter().enumerate() {
                    let inv = 1.0 / count as f64;
                    for t in (0..*len).filter(|&t| mask[b * len + t]) {
                        let dst = &mut d[(b * len + t) * channels..(b * len + t + 1) * channels];
                        dst.iter_mut().zip(&g[b * channels..(b + 1) * channels]).for_each(|(d, g)| *d += g * inv);
                    }
                }
                accumulate(grads, *input, &d);
            }
            Op::Dropout { input, scale } => {
                let d: Vec<f64> = g.iter().zip(scale).map(|(g, s)| g * s).collect();
                accumulate(grads, *input, &d);
            }
            Op::Bce { pred, target } => {
                let n = target.len() as f64;
                let d: Vec<f64> = val(*pred)
                    .iter()
                    .zip(target)
                    .map(|(&p, &t)| if p <= BCE_EPSILON || p >= 1.0 - BCE_EPSILON { 0.0 } else { g[0] * (p - t) / (p * (1.0 - p)) / n })
                    .collect();
                accumulate(grads, *pred, &d);
            }
            &Op::Sum(x) => {
                let d = vec![g[0]; self.nodes[x].value.len()];
                accumulate(grads, x, &d);
            }
            &Op::Mean(x) => {
                let n = self.nodes[x].value.len();
                let d = vec![g[0] / n as f64; n];
                accumulate(grads, x, &d);
            }
            Op::SumSquares { inputs, lambda } => {
                for &ip in inputs {
                    if self.wants(ip) {
                        let d: Vec<f64> = val(ip).iter().map(|v| 2.0 * lambda * v * g[0]).collect();
                        accumulate(grads, ip, &d);
                    }
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], j: usize, delta: &[f64]) {
    match &mut grads[j] {
        Some(existing) => existing.iter_mut().zip(delta).for_each(|(e, d)| *e += d),
        slot @ None => *slot = Some(delta.to_vec()),
    }
}
