//! Taped reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its forward value. `backward` walks
//! the tape once in reverse and accumulates first-order gradients into every
//! node that (transitively) depends on a `requires_grad` leaf.

use std::collections::HashMap;

use crate::error::{Result, UmtError};
use crate::params::ParamId;
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Log(Var),
    Abs(Var),
    Powf(Var, f64),
    Clamp(Var, f64, f64),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Dropout { x: Var, mask: Vec<f64> },
    Sum(Var),
    Mean(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    Reshape(Var),
    Gather { x: Var, indices: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Multiply-accumulate counters, split by whether a parameter took part.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MacCount {
    /// All matrix-product multiply-accumulates.
    pub total: u64,
    /// Products between two activations (token-to-token mixing: attention
    /// scores and attention-weighted sums). Projections by parameters are
    /// excluded.
    pub mixing: u64,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<ParamId, Var>,
    param_nodes: HashMap<usize, ParamId>,
    backward_done: bool,
    macs: MacCount,
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(UmtError::NumericDomain {
            op,
            detail: "non-finite input".into(),
        })
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// (outer, axis_len, inner) decomposition of a shape around `axis`.
fn axis_strides(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn macs(&self) -> MacCount {
        self.macs
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Registers a model parameter as a differentiable leaf. Repeated calls
    /// with the same id return the same node.
    pub fn param(&mut self, id: ParamId, value: &Tensor) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(value.clone(), true);
        self.params.insert(id, v);
        self.param_nodes.insert(v.0, id);
        v
    }

    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.params.get(&id).copied()
    }

    fn is_param(&self, v: Var) -> bool {
        self.param_nodes.contains_key(&v.0)
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> UmtError {
        UmtError::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    fn require_2d(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            _ => Err(UmtError::ShapeMismatch {
                op,
                left: self.shape(v).to_vec(),
                right: vec![],
            }),
        }
    }

    // ── Linear algebra ────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.require_2d("matmul", a)?;
        let (k2, n) = self.require_2d("matmul", b)?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let macs = (m * k * n) as u64;
        self.macs.total += macs;
        if !self.is_param(a) && !self.is_param(b) {
            self.macs.mixing += macs;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.require_2d("transpose", a)?;
        let out = transpose_raw(self.value(a).data(), r, c);
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(a), rg))
    }

    // ── Elementwise ───────────────────────────────────────────────────

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(op, a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.value(a);
        let data = v.data().iter().map(|x| f(*x)).collect();
        Tensor::new(v.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Adds a length-`cols` vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let cols = self.value(x).cols();
        if self.value(row).numel() != cols || self.shape(x).is_empty() {
            return Err(self.mismatch("add_row", x, row));
        }
        let r = self.value(row).data().to_vec();
        let mut t = self.value(x).clone();
        for chunk in t.data_mut().chunks_mut(cols) {
            for (o, b) in chunk.iter_mut().zip(&r) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(t, Op::AddRow(x, row), rg))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let t = self.map(x, |v| scale * v + shift);
        let rg = self.rg(x);
        self.push(t, Op::Affine(x, scale), rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.map(x, |v| v.max(0.0));
        let rg = self.rg(x);
        self.push(t, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.map(x, sigmoid);
        let rg = self.rg(x);
        self.push(t, Op::Sigmoid(x), rg)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let t = self.map(x, softplus);
        let rg = self.rg(x);
        self.push(t, Op::Softplus(x), rg)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(UmtError::NumericDomain {
                op: "log",
                detail: "input must be finite and positive".into(),
            });
        }
        let t = self.map(x, f64::ln);
        let rg = self.rg(x);
        Ok(self.push(t, Op::Log(x), rg))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let t = self.map(x, f64::abs);
        let rg = self.rg(x);
        self.push(t, Op::Abs(x), rg)
    }

    /// `x^p` for a constant exponent; the base must be nonnegative.
    pub fn powf(&mut self, x: Var, p: f64) -> Result<Var> {
        if self.value(x).data().iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(UmtError::NumericDomain {
                op: "powf",
                detail: "base must be finite and nonnegative".into(),
            });
        }
        let t = self.map(x, |v| v.powf(p));
        let rg = self.rg(x);
        Ok(self.push(t, Op::Powf(x, p), rg))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let t = self.map(x, |v| v.clamp(lo, hi));
        let rg = self.rg(x);
        self.push(t, Op::Clamp(x, lo, hi), rg)
    }

    // ── Normalization / stochastic ───────────────────────────────────

    /// Softmax along `axis`, stabilized by subtracting the running maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(UmtError::InvalidArgument(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        check_finite("softmax", self.value(x))?;
        let (outer, len, inner) = axis_strides(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = f64::NEG_INFINITY;
                for a in 0..len {
                    max = max.max(src[base + a * inner]);
                }
                let mut sum = 0.0;
                for a in 0..len {
                    let e = (src[base + a * inner] - max).exp();
                    out[base + a * inner] = e;
                    sum += e;
                }
                for a in 0..len {
                    out[base + a * inner] /= sum;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x, axis }, rg))
    }

    /// Layer normalization over the last dimension with epsilon 1e-5.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let d = self.value(x).cols();
        if self.value(gain).numel() != d {
            return Err(self.mismatch("layer_norm", x, gain));
        }
        if self.value(bias).numel() != d {
            return Err(self.mismatch("layer_norm", x, bias));
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = src.len() / d;
        let mut out = vec![0.0; src.len()];
        let mut xhat = vec![0.0; src.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + EPS).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Inverted dropout. Identity in evaluation mode or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut RngState, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(UmtError::InvalidArgument(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
            .collect();
        let v = self.value(x);
        let data = v.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Dropout { x, mask }, rg))
    }

    // ── Reductions and structure ─────────────────────────────────────

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (r, c) = self.require_2d("slice_cols", x)?;
        if start + width > c {
            return Err(UmtError::ShapeMismatch {
                op: "slice_cols",
                left: vec![r, c],
                right: vec![start, width],
            });
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(r * width);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + width]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![r, width], out)?, Op::SliceCols { x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| UmtError::InvalidArgument("concat_cols of nothing".into()))?;
        let (r, _) = self.require_2d("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.require_2d("concat_cols", p)?;
            if pr != r {
                return Err(self.mismatch("concat_cols", first, p));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(vec![r, total], out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let (r, c) = self.require_2d("slice_rows", x)?;
        if start + count > r {
            return Err(UmtError::ShapeMismatch {
                op: "slice_rows",
                left: vec![r, c],
                right: vec![start, count],
            });
        }
        let out = self.value(x).data()[start * c..(start + count) * c].to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![count, c], out)?, Op::SliceRows { x, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Picks flat elements of `x` by index into a 1-D result.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let n = self.value(x).numel();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(UmtError::InvalidArgument(format!(
                "gather index {bad} out of range for {n} elements"
            )));
        }
        let src = self.value(x).data();
        let out = indices.iter().map(|&i| src[i]).collect();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::vector(out),
            Op::Gather {
                x,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    // ── Backward ──────────────────────────────────────────────────────

    /// Populates gradients of `loss` for every node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(UmtError::BackwardTwice);
        }
        if self.value(loss).numel() != 1 {
            return Err(UmtError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    /// Clears gradients so `backward` may run again.
    pub fn reset(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every registered parameter touched by the last backward.
    pub fn param_grads(&self) -> Vec<(ParamId, &[f64])> {
        let mut out: Vec<_> = self
            .params
            .iter()
            .filter_map(|(&id, &v)| self.grad(v).map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    fn accum(&mut self, v: Var, g: impl FnOnce(usize) -> Vec<f64>) {
        if !self.rg(v) {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let delta = g(n);
        match &mut self.grads[v.0] {
            Some(acc) => {
                for (a, d) in acc.iter_mut().zip(&delta) {
                    *a += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, idx: usize, g: &[f64]) {
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(a).rows(), self.value(a).cols());
                let n = self.value(b).cols();
                if self.rg(a) {
                    let bt = transpose_raw(self.value(b).data(), k, n);
                    let ga = matmul_raw(g, &bt, m, n, k);
                    self.accum(a, |_| ga);
                }
                if self.rg(b) {
                    let at = transpose_raw(self.value(a).data(), m, k);
                    let gb = matmul_raw(&at, g, k, m, n);
                    self.accum(b, |_| gb);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (self.value(a).rows(), self.value(a).cols());
                let ga = transpose_raw(g, c, r);
                self.accum(a, |_| ga);
            }
            Op::Add(a, b) => {
                self.accum(a, |_| g.to_vec());
                self.accum(b, |_| g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accum(a, |_| g.to_vec());
                self.accum(b, |_| g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let av = self.value(a).data().to_vec();
                let bv = self.value(b).data().to_vec();
                self.accum(a, |_| g.iter().zip(&bv).map(|(x, y)| x * y).collect());
                self.accum(b, |_| g.iter().zip(&av).map(|(x, y)| x * y).collect());
            }
            Op::AddRow(x, row) => {
                self.accum(x, |_| g.to_vec());
                self.accum(row, |cols| {
                    let mut acc = vec![0.0; cols];
                    for chunk in g.chunks(cols) {
                        for (a, v) in acc.iter_mut().zip(chunk) {
                            *a += v;
                        }
                    }
                    acc
                });
            }
            Op::Affine(x, s) => self.accum(x, |_| g.iter().map(|v| v * s).collect()),
            Op::Relu(x) => {
                let xv = self.value(x).data().to_vec();
                self.accum(x, |_| {
                    g.iter()
                        .zip(&xv)
                        .map(|(gv, v)| if *v > 0.0 { *gv } else { 0.0 })
                        .collect()
                });
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[idx].value.data().to_vec();
                self.accum(x, |_| g.iter().zip(&y).map(|(gv, s)| gv * s * (1.0 - s)).collect());
            }
            Op::Softplus(x) => {
                let xv = self.value(x).data().to_vec();
                self.accum(x, |_| g.iter().zip(&xv).map(|(gv, v)| gv * sigmoid(*v)).collect());
            }
            Op::Log(x) => {
                let xv = self.value(x).data().to_vec();
                self.accum(x, |_| g.iter().zip(&xv).map(|(gv, v)| gv / v).collect());
            }
            Op::Abs(x) => {
                let xv = self.value(x).data().to_vec();
                self.accum(x, |_| {
                    g.iter()
                        .zip(&xv)
                        .map(|(gv, v)| if *v > 0.0 { *gv } else if *v < 0.0 { -gv } else { 0.0 })
                        .collect()
                });
            }
            Op::Powf(x, p) => {
                let xv = self.value(x).data().to_vec();
                self.accum(x, |_| {
                    g.iter()
                        .zip(&xv)
                        .map(|(gv, v)| if *v == 0.0 && p >= 1.0 { if p == 1.0 { *gv } else { 0.0 } } else { gv * p * v.powf(p - 1.0) })
                        .collect()
                });
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(x).data().to_vec();
                self.accum(x, |_| {
                    g.iter()
                        .zip(&xv)
                        .map(|(gv, v)| if *v > lo && *v < hi { *gv } else { 0.0 })
                        .collect()
                });
            }
            Op::Softmax { x, axis } => {
                let y = self.nodes[idx].value.data().to_vec();
                let shape = self.shape(x).to_vec();
                let (outer, len, inner) = axis_strides(&shape, axis);
                self.accum(x, |n| {
                    let mut out = vec![0.0; n];
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let dot: f64 = (0..len).map(|a| g[base + a * inner] * y[base + a * inner]).sum();
                            for a in 0..len {
                                let k = base + a * inner;
                                out[k] = y[k] * (g[k] - dot);
                            }
                        }
                    }
                    out
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gv = self.value(gain).data().to_vec();
                let d = gv.len();
                let rows = xhat.len() / d;
                self.accum(gain, |_| {
                    let mut acc = vec![0.0; d];
                    for r in 0..rows {
                        for j in 0..d {
                            acc[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                    acc
                });
                self.accum(bias, |_| {
                    let mut acc = vec![0.0; d];
                    for r in 0..rows {
                        for j in 0..d {
                            acc[j] += g[r * d + j];
                        }
                    }
                    acc
                });
                self.accum(x, |n| {
                    let mut out = vec![0.0; n];
                    for r in 0..rows {
                        let dxhat: Vec<f64> = (0..d).map(|j| g[r * d + j] * gv[j]).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dx = (0..d).map(|j| dxhat[j] * xhat[r * d + j]).sum::<f64>() / d as f64;
                        for j in 0..d {
                            out[r * d + j] = rstd[r] * (dxhat[j] - mean_d - xhat[r * d + j] * mean_dx);
                        }
                    }
                    out
                });
            }
            Op::Dropout { x, mask } => {
                self.accum(x, |_| g.iter().zip(&mask).map(|(gv, m)| gv * m).collect());
            }
            Op::Sum(x) => self.accum(x, |n| vec![g[0]; n]),
            Op::Mean(x) => self.accum(x, |n| vec![g[0] / n as f64; n]),
            Op::SliceCols { x, start } => {
                let (r, c) = (self.value(x).rows(), self.value(x).cols());
                let w = self.nodes[idx].value.cols();
                self.accum(x, |n| {
                    let mut out = vec![0.0; n];
                    for i in 0..r {
                        out[i * c + start..i * c + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                    }
                    out
                });
            }
            Op::ConcatCols(parts) => {
                let total = self.nodes[idx].value.cols();
                let rows = self.nodes[idx].value.rows();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(p).cols();
                    self.accum(p, |n| {
                        let mut out = vec![0.0; n];
                        for i in 0..rows {
                            out[i * w..(i + 1) * w].copy_from_slice(&g[i * total + offset..i * total + offset + w]);
                        }
                        out
                    });
                    offset += w;
                }
            }
            Op::SliceRows { x, start } => {
                let c = self.value(x).cols();
                self.accum(x, |n| {
                    let mut out = vec![0.0; n];
                    out[start * c..start * c + g.len()].copy_from_slice(g);
                    out
                });
            }
            Op::Reshape(x) => self.accum(x, |_| g.to_vec()),
            Op::Gather { x, indices } => {
                self.accum(x, |n| {
                    let mut out = vec![0.0; n];
                    for (gv, &i) in g.iter().zip(&indices) {
                        out[i] += gv;
                    }
                    out
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = tape.constant(t2(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let i = tape.constant(Tensor::identity(2));
        let c = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);

        let b = tape.constant(t2(&[&[5.0], &[7.0]]));
        let c = tape.matmul(i, b).unwrap();
        assert_eq!(tape.value(c).data(), &[5.0, 7.0]);
    }

    #[test]
    fn matmul_mismatch_names_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_basic_and_stable() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = tape.softmax(x, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);

        let x = tape.constant(Tensor::vector(vec![1000.0, 0.0]));
        let y = tape.softmax(x, 0).unwrap();
        let v = tape.value(y).data();
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1] >= 0.0 && v[1] < 1e-300);

        let x = tape.constant(Tensor::vector(vec![f64::NAN, 0.0]));
        assert!(matches!(tape.softmax(x, 0), Err(UmtError::NumericDomain { .. })));
        let x = tape.constant(Tensor::vector(vec![1.0]));
        assert!(tape.softmax(x, 1).is_err());
    }

    #[test]
    fn layer_norm_cases() {
        let mut tape = Tape::new();
        let g = tape.constant(Tensor::filled(&[3], 1.0));
        let b = tape.constant(Tensor::zeros(&[3]));
        let x = tape.constant(t2(&[&[3.0, 3.0, 3.0]]));
        let y = tape.layer_norm(x, g, b).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 0.0]);

        let g = tape.constant(Tensor::filled(&[2], 1.0));
        let b = tape.constant(Tensor::zeros(&[2]));
        let x = tape.constant(t2(&[&[1.0, -1.0]]));
        let y = tape.layer_norm(x, g, b).unwrap();
        // mean 0, variance 1: (±1) / sqrt(1 + 1e-5)
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        let v = tape.value(y).data();
        assert!((v[0] - expect).abs() < 1e-15 && (v[1] + expect).abs() < 1e-15);
    }

    #[test]
    fn dropout_modes() {
        let mut rng = RngState::new(1);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(&[10], 2.0));
        assert_eq!(tape.dropout(x, 0.0, &mut rng, true).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.5, &mut rng, false).unwrap(), x);
        assert!(tape.dropout(x, 1.0, &mut rng, true).is_err());
        assert!(tape.dropout(x, -0.1, &mut rng, true).is_err());

        let n = 1_000_000;
        let x = tape.constant(Tensor::filled(&[n], 1.0));
        let y = tape.dropout(x, 0.1, &mut rng, true).unwrap();
        let v = tape.value(y).data();
        let zeros = v.iter().filter(|a| **a == 0.0).count() as f64 / n as f64;
        assert!((zeros - 0.1).abs() < 0.01, "zero fraction {zeros}");
        assert!(v.iter().all(|a| *a == 0.0 || (*a - 1.0 / 0.9).abs() < 1e-15));
    }

    #[test]
    fn backward_simple_cases() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]), true);
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_errors() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        assert!(matches!(tape.backward(x), Err(UmtError::NonScalarLoss(_))));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(UmtError::BackwardTwice)));
        tape.reset();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn mixing_macs_exclude_params() {
        let mut tape = Tape::new();
        let w = tape.param(ParamId(0), &Tensor::zeros(&[4, 4]));
        let x = tape.constant(Tensor::zeros(&[3, 4]));
        let h = tape.matmul(x, w).unwrap();
        let ht = tape.transpose(h).unwrap();
        tape.matmul(h, ht).unwrap();
        assert_eq!(tape.macs(), MacCount { total: 48 + 36, mixing: 36 });
    }
}
