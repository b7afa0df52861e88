//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so the tape is already topologically sorted;
//! [`Graph::backward`] walks it once in reverse. Nodes that do not depend on any trainable
//! leaf are marked `requires_grad = false` and skipped entirely on the way back, which keeps
//! frozen sub-networks (and cached constants) free.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::ops::{log_softmax_row, softmax_in_place};
use crate::numerics::{ParamGrads, ParamStore, Tensor};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Concat(Vec<Var>),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MeanRows(Var),
    MeanOf(Vec<Var>),
    Sum(Var),
    Gelu(Var),
    Tanh(Var),
    Relu(Var),
    GatherRows(Var, Vec<usize>),
    ScatterRows {
        base: Var,
        src: Var,
        targets: Vec<usize>,
    },
    Pick(Var, usize),
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
    CosineRows {
        x: Var,
        g: Var,
        eps: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. One graph per forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    param_order: Vec<(String, Var)>,
}

/// Gradients for every node of one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zero-filled when `v` was not reached.
    pub fn get(&self, v: Var, shape: &[usize]) -> Tensor {
        self.grads
            .get(v.0)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn try_get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A free leaf that receives a gradient (not tied to a parameter store).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a stored parameter. Frozen parameters enter as constants. Binding the same
    /// name twice returns the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let p = store.get(name)?;
        let v = self.push(p.value.clone(), Op::Leaf, !p.frozen);
        self.params.insert(name.to_string(), v);
        self.param_order.push((name.to_string(), v));
        Ok(v)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).add(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).sub(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_with(self.value(b), |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    /// Adds a length-`D` vector to every row of an `L x D` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let d = self.value(a).cols();
        if self.value(row).len() != d || self.value(row).rank() != 1 {
            return Err(Error::shape("add_row", self.shape(a), self.shape(row)));
        }
        let r = self.value(row).data().to_vec();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(d) {
            for (o, b) in chunk.iter_mut().zip(&r) {
                *o += b;
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a, c), rg)
    }

    /// Multiplies a tensor by a single-element node.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let c = self.value(s).item()?;
        let v = self.value(a).scale(c);
        let rg = self.rg(&[a, s]);
        Ok(self.push(v, Op::ScaleBy(a, s), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose()?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Reshape(a), rg))
    }

    /// Columns `start..start + width` of a rank-2 tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 || start + width > t.cols() {
            return Err(Error::Contract(format!(
                "slice_cols {start}+{width} out of range for {:?}",
                t.shape()
            )));
        }
        let rows = t.rows();
        let mut out = Vec::with_capacity(rows * width);
        for i in 0..rows {
            out.extend_from_slice(&t.row(i)[start..start + width]);
        }
        let v = Tensor::new(&[rows, width], out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::SliceCols(a, start), rg))
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptySequence("concat_cols"))?;
        let rows = self.value(first).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.rows() != rows {
                return Err(Error::shape("concat_cols", self.shape(first), t.shape()));
            }
            total += t.cols();
        }
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let v = Tensor::new(&[rows, total], out)?;
        let rg = self.rg(parts);
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Flattens and concatenates into one rank-1 tensor.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptySequence("concat"));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let v = Tensor::vector(out);
        let rg = self.rg(parts);
        Ok(self.push(v, Op::Concat(parts.to_vec()), rg))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let v = crate::numerics::ops::softmax(self.value(a));
        let rg = self.rg(&[a]);
        self.push(v, Op::Softmax(a), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let mut out = Vec::with_capacity(t.len());
        for row in t.data().chunks(c) {
            out.extend(log_softmax_row(row));
        }
        let v = Tensor::new(t.shape(), out).expect("shape preserved");
        let rg = self.rg(&[a]);
        self.push(v, Op::LogSoftmax(a), rg)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let t = self.value(x);
        let d = t.cols();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        if g.len() != d || b.len() != d {
            return Err(Error::shape("layer_norm", t.shape(), self.shape(gain)));
        }
        let mut xhat = Vec::with_capacity(t.len());
        let mut inv_std = Vec::with_capacity(t.len() / d);
        let mut out = Vec::with_capacity(t.len());
        for row in t.data().chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for j in 0..d {
                let xh = (row[j] - mean) * inv;
                xhat.push(xh);
                out.push(xh * g[j] + b[j]);
            }
        }
        let v = Tensor::new(t.shape(), out)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Mean over rows of an `L x D` tensor, giving a length-`D` vector.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let v = crate::numerics::ops::mean_pool(self.value(a))?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::MeanRows(a), rg))
    }

    /// Element-wise mean of same-shaped nodes: left-to-right sum divided by the count.
    pub fn mean_of(&mut self, parts: &[Var]) -> Result<Var> {
        let (&first, rest) = parts.split_first().ok_or(Error::EmptySequence("mean_of"))?;
        let mut acc = self.value(first).clone();
        for &p in rest {
            if self.shape(p) != acc.shape() {
                return Err(Error::shape("mean_of", acc.shape(), self.shape(p)));
            }
            acc.add_assign(self.value(p))?;
        }
        let n = parts.len() as f64;
        let v = acc.map(|x| x / n);
        let rg = self.rg(parts);
        Ok(self.push(v, Op::MeanOf(parts.to_vec()), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(v, Op::Sum(a), rg)
    }

    /// Sum of several nodes of identical shape, reduced left to right.
    pub fn add_all(&mut self, parts: &[Var]) -> Result<Var> {
        let (&first, rest) = parts.split_first().ok_or(Error::EmptySequence("add_all"))?;
        let mut acc = first;
        for &p in rest {
            acc = self.add(acc, p)?;
        }
        Ok(acc)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| {
            let u = GELU_C * (x + GELU_A * x * x * x);
            0.5 * x * (1.0 + u.tanh())
        });
        let rg = self.rg(&[a]);
        self.push(v, Op::Gelu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        let rg = self.rg(&[a]);
        self.push(v, Op::Tanh(a), rg)
    }

    /// `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(a).gather_rows(idx)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::GatherRows(a, idx.to_vec()), rg))
    }

    /// Copy of `base` whose row `targets[j]` is replaced by row `j` of `src`.
    /// Targets must be distinct.
    pub fn scatter_rows(&mut self, base: Var, src: Var, targets: &[usize]) -> Result<Var> {
        let (b, s) = (self.value(base), self.value(src));
        if b.rank() != 2 || s.rank() != 2 || b.cols() != s.cols() || s.rows() != targets.len() {
            return Err(Error::shape("scatter_rows", b.shape(), s.shape()));
        }
        let mut seen = vec![false; b.rows()];
        for &t in targets {
            if t >= b.rows() || std::mem::replace(&mut seen[t], true) {
                return Err(Error::Contract(format!(
                    "scatter target {t} out of range or repeated"
                )));
            }
        }
        let d = b.cols();
        let mut out = b.clone();
        for (j, &t) in targets.iter().enumerate() {
            out.data_mut()[t * d..(t + 1) * d].copy_from_slice(s.row(j));
        }
        let rg = self.rg(&[base, src]);
        Ok(self.push(
            out,
            Op::ScatterRows {
                base,
                src,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Element `i` of a flattened tensor as a single-element node.
    pub fn pick(&mut self, a: Var, i: usize) -> Result<Var> {
        let t = self.value(a);
        let x = *t
            .data()
            .get(i)
            .ok_or_else(|| Error::Contract(format!("pick {i} out of {}", t.len())))?;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::scalar(x), Op::Pick(a, i), rg))
    }

    /// `-log softmax(logits)[label]` for a rank-1 logit vector.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let t = self.value(logits);
        if t.rank() != 1 {
            return Err(Error::Contract(format!(
                "cross_entropy expects rank-1 logits, got {:?}",
                t.shape()
            )));
        }
        if label >= t.len() {
            return Err(Error::LabelRange {
                label,
                vocab: t.len(),
            });
        }
        let ls = log_softmax_row(t.data());
        let mut probs = t.data().to_vec();
        softmax_in_place(&mut probs);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(-ls[label]),
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
            rg,
        ))
    }

    /// Cosine similarity of every row of `x` (`L x D`) with vector `g` (`D`).
    pub fn cosine_rows(&mut self, x: Var, g: Var, eps: f64) -> Result<Var> {
        let (xt, gt) = (self.value(x), self.value(g));
        if xt.rank() != 2 || gt.len() != xt.cols() {
            return Err(Error::shape("cosine_rows", xt.shape(), gt.shape()));
        }
        let mut out = Vec::with_capacity(xt.rows());
        for i in 0..xt.rows() {
            out.push(crate::numerics::ops::cosine_sim(xt.row(i), gt.data(), eps)?);
        }
        let rg = self.rg(&[x, g]);
        Ok(self.push(Tensor::vector(out), Op::CosineRows { x, g, eps }, rg))
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward_grads(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &gy, &mut grads)?;
            grads[i] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    /// Reverse pass returning gradients for every trainable bound parameter. Parameters
    /// the loss does not reach receive zeros.
    pub fn backward(&self, loss: Var) -> Result<ParamGrads> {
        let g = self.backward_grads(loss)?;
        let mut out = ParamGrads::new();
        for (name, v) in &self.param_order {
            if self.nodes[v.0].requires_grad {
                out.insert(name.clone(), g.get(*v, self.shape(*v)));
            }
        }
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn propagate(&self, i: usize, gy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, gy.clone())?;
                self.acc(grads, *b, gy.clone())?;
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, gy.clone())?;
                self.acc(grads, *b, gy.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, gy.zip_with(bv, |g, x| g * x)?)?;
                self.acc(grads, *b, gy.zip_with(av, |g, x| g * x)?)?;
            }
            Op::AddRow(a, r) => {
                self.acc(grads, *a, gy.clone())?;
                if self.requires_grad(*r) {
                    let d = gy.cols();
                    let mut gr = vec![0.0; d];
                    for chunk in gy.data().chunks(d) {
                        for (o, g) in gr.iter_mut().zip(chunk) {
                            *o += g;
                        }
                    }
                    self.acc(grads, *r, Tensor::vector(gr))?;
                }
            }
            Op::Scale(a, c) => self.acc(grads, *a, gy.scale(*c))?,
            Op::ScaleBy(a, s) => {
                let c = self.value(*s).item()?;
                self.acc(grads, *a, gy.scale(c))?;
                if self.requires_grad(*s) {
                    let ds = gy.dot(self.value(*a))?;
                    self.acc(grads, *s, Tensor::full(self.shape(*s), ds))?;
                }
            }
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    let bt = self.value(*b).transpose()?;
                    self.acc(grads, *a, gy.matmul(&bt)?)?;
                }
                if self.requires_grad(*b) {
                    let at = self.value(*a).transpose()?;
                    self.acc(grads, *b, at.matmul(gy)?)?;
                }
            }
            Op::Transpose(a) => self.acc(grads, *a, gy.transpose()?)?,
            Op::Reshape(a) => self.acc(grads, *a, gy.reshape(self.shape(*a))?)?,
            Op::SliceCols(a, start) => {
                let src = self.value(*a);
                let (rows, cols, w) = (src.rows(), src.cols(), gy.cols());
                let mut g = Tensor::zeros(src.shape());
                for r in 0..rows {
                    g.data_mut()[r * cols + start..r * cols + start + w]
                        .copy_from_slice(gy.row(r));
                }
                self.acc(grads, *a, g)?;
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.requires_grad(p) {
                        let rows = gy.rows();
                        let mut out = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            out.extend_from_slice(&gy.row(r)[offset..offset + w]);
                        }
                        self.acc(grads, p, Tensor::new(self.shape(p), out)?)?;
                    }
                    offset += w;
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.requires_grad(p) {
                        let slice = gy.data()[offset..offset + n].to_vec();
                        self.acc(grads, p, Tensor::new(self.shape(p), slice)?)?;
                    }
                    offset += n;
                }
            }
            Op::Softmax(a) => {
                let c = y.cols();
                let mut out = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(c).zip(gy.data().chunks(c)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    out.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - dot)));
                }
                self.acc(grads, *a, Tensor::new(y.shape(), out)?)?;
            }
            Op::LogSoftmax(a) => {
                let c = y.cols();
                let mut out = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(c).zip(gy.data().chunks(c)) {
                    let s: f64 = gr.iter().sum();
                    out.extend(yr.iter().zip(gr).map(|(yv, gv)| gv - yv.exp() * s));
                }
                self.acc(grads, *a, Tensor::new(y.shape(), out)?)?;
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = y.cols();
                let g = self.value(*gain).data();
                if self.requires_grad(*x) {
                    let mut dx = Vec::with_capacity(y.len());
                    for (r, gr) in gy.data().chunks(d).enumerate() {
                        let xh = &xhat[r * d..(r + 1) * d];
                        let dxh: Vec<f64> = gr.iter().zip(g).map(|(a, b)| a * b).collect();
                        let s1: f64 = dxh.iter().sum();
                        let s2: f64 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum();
                        let k = inv_std[r] / d as f64;
                        dx.extend(
                            (0..d).map(|j| k * (d as f64 * dxh[j] - s1 - xh[j] * s2)),
                        );
                    }
                    self.acc(grads, *x, Tensor::new(y.shape(), dx)?)?;
                }
                if self.requires_grad(*gain) || self.requires_grad(*bias) {
                    let mut dg = vec![0.0; d];
                    let mut db = vec![0.0; d];
                    for (r, gr) in gy.data().chunks(d).enumerate() {
                        for j in 0..d {
                            dg[j] += gr[j] * xhat[r * d + j];
                            db[j] += gr[j];
                        }
                    }
                    self.acc(grads, *gain, Tensor::new(self.shape(*gain), dg)?)?;
                    self.acc(grads, *bias, Tensor::new(self.shape(*bias), db)?)?;
                }
            }
            Op::MeanRows(a) => {
                let src = self.value(*a);
                let l = src.rows() as f64;
                let mut g = Vec::with_capacity(src.len());
                for _ in 0..src.rows() {
                    g.extend(gy.data().iter().map(|v| v / l));
                }
                self.acc(grads, *a, Tensor::new(src.shape(), g)?)?;
            }
            Op::MeanOf(parts) => {
                let n = parts.len() as f64;
                let g = gy.map(|v| v / n);
                for &p in parts {
                    self.acc(grads, p, g.clone())?;
                }
            }
            Op::Sum(a) => {
                let s = gy.item()?;
                self.acc(grads, *a, Tensor::full(self.shape(*a), s))?;
            }
            Op::Gelu(a) => {
                let g = self.value(*a).zip_with(gy, |x, g| {
                    let u = GELU_C * (x + GELU_A * x * x * x);
                    let t = u.tanh();
                    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                    g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                })?;
                self.acc(grads, *a, g)?;
            }
            Op::Tanh(a) => {
                let g = y.zip_with(gy, |t, g| g * (1.0 - t * t))?;
                self.acc(grads, *a, g)?;
            }
            Op::Relu(a) => {
                let g = self
                    .value(*a)
                    .zip_with(gy, |x, g| if x > 0.0 { g } else { 0.0 })?;
                self.acc(grads, *a, g)?;
            }
            Op::GatherRows(a, idx) => {
                let src = self.value(*a);
                let d = src.cols();
                let mut g = Tensor::zeros(src.shape());
                for (j, &r) in idx.iter().enumerate() {
                    for (o, v) in g.data_mut()[r * d..(r + 1) * d].iter_mut().zip(gy.row(j)) {
                        *o += v;
                    }
                }
                self.acc(grads, *a, g)?;
            }
            Op::ScatterRows { base, src, targets } => {
                let d = gy.cols();
                if self.requires_grad(*base) {
                    let mut gb = gy.clone();
                    for &t in targets {
                        gb.data_mut()[t * d..(t + 1) * d].fill(0.0);
                    }
                    self.acc(grads, *base, gb)?;
                }
                if self.requires_grad(*src) {
                    let gs = gy.gather_rows(targets)?;
                    self.acc(grads, *src, gs.reshape(self.shape(*src))?)?;
                }
            }
            Op::Pick(a, idx) => {
                let mut g = Tensor::zeros(self.shape(*a));
                g.data_mut()[*idx] = gy.item()?;
                self.acc(grads, *a, g)?;
            }
            Op::CrossEntropy {
                logits,
                label,
                probs,
            } => {
                let s = gy.item()?;
                let mut g = probs.clone();
                g[*label] -= 1.0;
                for v in &mut g {
                    *v *= s;
                }
                self.acc(grads, *logits, Tensor::new(self.shape(*logits), g)?)?;
            }
            Op::CosineRows { x, g, eps } => {
                let (xt, gt) = (self.value(*x), self.value(*g));
                let d = xt.cols();
                let gv = gt.data();
                let ng = gv.iter().map(|v| v * v).sum::<f64>().sqrt();
                let mut dx = vec![0.0; xt.len()];
                let mut dg = vec![0.0; d];
                for r in 0..xt.rows() {
                    let xr = xt.row(r);
                    let nx = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let num: f64 = xr.iter().zip(gv).map(|(a, b)| a * b).sum();
                    let den = nx * ng + eps;
                    let up = gy.data()[r];
                    for j in 0..d {
                        let ux = if nx > 0.0 { xr[j] / nx } else { 0.0 };
                        let ug = if ng > 0.0 { gv[j] / ng } else { 0.0 };
                        dx[r * d + j] += up * (gv[j] / den - num * ng * ux / (den * den));
                        dg[j] += up * (xr[j] / den - num * nx * ug / (den * den));
                    }
                }
                self.acc(grads, *x, Tensor::new(xt.shape(), dx)?)?;
                self.acc(grads, *g, Tensor::new(gt.shape(), dg)?)?;
            }
        }
        Ok(())
    }
}
