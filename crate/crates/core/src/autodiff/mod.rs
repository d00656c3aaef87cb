//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every primitive appends one node holding its output value and the data
//! its backward rule needs. Nodes are only ever appended, so the tape is in
//! topological order by construction and [`Tape::backward`] visits each
//! node once, newest first.

mod kernels;
mod optim;

pub(crate) use kernels::gemm;
pub use optim::{AdamConfig, AdamState, LrSchedule, WeightDecayMode};

use crate::error::TensorError;
use crate::tensor::{numel, Tensor};
use kernels::ConvDims;

type Res<T> = std::result::Result<T, TensorError>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, batched: bool },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    Sigmoid { a: Var },
    Tanh { a: Var },
    Relu { a: Var },
    Gelu { a: Var },
    Softmax { a: Var },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { a: Var, axis: usize, start: usize },
    Reshape { a: Var },
    Permute { a: Var, axes: Vec<usize> },
    Conv { x: Var, w: Var, b: Var, dims: ConvDims },
    Dropout { a: Var, mask: Vec<f64> },
    Sum { a: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    WeightedCe { logits: Var, labels: Vec<usize>, sample_w: Vec<f64>, probs: Vec<f64>, denom: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Record of primitive operations for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Invalid {
        op,
        msg: msg.into(),
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
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

    /// Records an input tensor. Non-finite values are rejected.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Res<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        Ok(self.push(value, Op::Leaf, requires_grad))
    }

    pub fn constant(&mut self, value: Tensor) -> Res<Var> {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Res<Var> {
        self.leaf(value, true)
    }

    /// Matrix product.
    ///
    /// With a 2-D right operand `[k, n]`, the left operand is any `[..., k]`
    /// and the result is `[..., n]`. With two 3-D operands `[bt, m, k]` and
    /// `[bt, k, n]` the product is taken per leading index.
    pub fn matmul(&mut self, a: Var, b: Var) -> Res<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (value, batched) = if sb.len() == 2 && !sa.is_empty() {
            let (k, n) = (sb[0], sb[1]);
            if *sa.last().unwrap() != k {
                return Err(shape_err("matmul", &sa, &sb));
            }
            let m = numel(&sa[..sa.len() - 1]);
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
            let mut shape = sa[..sa.len() - 1].to_vec();
            shape.push(n);
            (Tensor::new(shape, out)?, false)
        } else if sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && sa[2] == sb[1] {
            let (bt, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
            let mut out = vec![0.0; bt * m * n];
            let (da, db) = (self.value(a).data(), self.value(b).data());
            for i in 0..bt {
                gemm(
                    m,
                    k,
                    n,
                    &da[i * m * k..],
                    false,
                    &db[i * k * n..],
                    false,
                    &mut out[i * m * n..],
                    false,
                );
            }
            (Tensor::new(vec![bt, m, n], out)?, true)
        } else {
            return Err(shape_err("matmul", &sa, &sb));
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul { a, b, batched }, rg))
    }

    /// Elementwise sum. `b` may have the shape of any suffix of `a`'s shape
    /// (for example a bias row), in which case it is broadcast.
    pub fn add(&mut self, a: Var, b: Var) -> Res<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(shape_err("add", sa, sb));
        }
        let bv = self.value(b).data();
        let w = bv.len().max(1);
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(w) {
            for (o, x) in chunk.iter_mut().zip(bv) {
                *o += x;
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    /// Elementwise (Hadamard) product of equal shapes.
    pub fn mul(&mut self, a: Var, b: Var) -> Res<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("mul", self.shape(a), self.shape(b)));
        }
        let mut out = self.value(a).clone();
        for (o, x) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= x;
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Res<Var> {
        let out = self.map(a, |x| x * c);
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Scale { a, c }, rg))
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x = f(*x));
        out
    }

    pub fn sigmoid(&mut self, a: Var) -> Res<Var> {
        let out = self.map(a, kernels::sigmoid);
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Sigmoid { a }, rg))
    }

    pub fn tanh(&mut self, a: Var) -> Res<Var> {
        let out = self.map(a, f64::tanh);
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Tanh { a }, rg))
    }

    pub fn relu(&mut self, a: Var) -> Res<Var> {
        let out = self.map(a, |x| x.max(0.0));
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Relu { a }, rg))
    }

    pub fn gelu(&mut self, a: Var) -> Res<Var> {
        let out = self.map(a, kernels::gelu);
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Gelu { a }, rg))
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Res<Var> {
        self.softmax_impl(a, false)
    }

    /// Softmax over the last axis of `[..., S, S]` score matrices where row
    /// `i` only sees columns `0..=i`; masked entries are exactly zero.
    pub fn causal_softmax(&mut self, a: Var) -> Res<Var> {
        self.softmax_impl(a, true)
    }

    fn softmax_impl(&mut self, a: Var, causal: bool) -> Res<Var> {
        let x = self.value(a);
        if !x.is_finite() {
            return Err(TensorError::NonFinite { op: "softmax" });
        }
        let shape = x.shape().to_vec();
        let w = *shape.last().ok_or_else(|| invalid("softmax", "scalar input"))?;
        if causal && (shape.len() < 2 || shape[shape.len() - 2] != w) {
            return Err(invalid("causal_softmax", format!("needs square score matrices, got {shape:?}")));
        }
        let mut out = vec![0.0; x.numel()];
        for (r, (src, dst)) in x.data().chunks(w).zip(out.chunks_mut(w)).enumerate() {
            let valid = if causal { r % w + 1 } else { w };
            let m = src[..valid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for j in 0..valid {
                dst[j] = (src[j] - m).exp();
                s += dst[j];
            }
            for v in &mut dst[..valid] {
                *v /= s;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { a }, rg))
    }

    /// Concatenates tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Res<Var> {
        let first = parts.first().ok_or_else(|| invalid("concat", "no inputs"))?;
        let s0 = self.shape(*first).to_vec();
        if axis >= s0.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for {s0:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != s0.len() || s[..axis] != s0[..axis] || s[axis + 1..] != s0[axis + 1..] {
                return Err(shape_err("concat", &s0, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&s0, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = self.shape(*p)[axis] * inner;
                out.extend_from_slice(&self.value(*p).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = s0;
        shape[axis] = total;
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Takes `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Res<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(invalid(
                "slice",
                format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let out = kernels::slice_axis(self.value(a).data(), outer, n, inner, start, len);
        let mut oshape = shape;
        oshape[axis] = len;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(oshape, out)?, Op::Slice { a, axis, start }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Res<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Reshape { a }, rg))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Res<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&x| x >= shape.len() || std::mem::replace(&mut seen[x], true)) {
            return Err(invalid("permute", format!("{axes:?} is not a permutation of {} axes", shape.len())));
        }
        let out = kernels::permute(self.value(a).data(), &shape, axes);
        let oshape: Vec<usize> = axes.iter().map(|&i| shape[i]).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::new(oshape, out)?,
            Op::Permute {
                a,
                axes: axes.to_vec(),
            },
            rg,
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Res<Var> {
        let nd = self.shape(a).len();
        if nd < 2 {
            return Err(invalid("transpose", "needs at least two axes"));
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 2, nd - 1);
        self.permute(a, &axes)
    }

    /// Valid convolution over time with a `kernel × 1` receptive field.
    ///
    /// `x` is `[B, T, S, C_in]` (S independent sensor axes), `w` is
    /// `[kernel·C_in, C_out]` with row index `dk·C_in + c`, `b` is `[C_out]`.
    /// The result is `[B, T − kernel + 1, S, C_out]`.
    pub fn conv_time(&mut self, x: Var, w: Var, b: Var, kernel: usize) -> Res<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let sb = self.shape(b).to_vec();
        if sx.len() != 4 || sw.len() != 2 || kernel == 0 || sw[0] != kernel * sx[3] {
            return Err(shape_err("conv_time", &sx, &sw));
        }
        if sb != [sw[1]] {
            return Err(shape_err("conv_time", &sw, &sb));
        }
        if sx[1] < kernel {
            return Err(invalid(
                "conv_time",
                format!("time extent {} shorter than kernel {kernel}", sx[1]),
            ));
        }
        let dims = ConvDims {
            batch: sx[0],
            time: sx[1],
            sensors: sx[2],
            in_channels: sx[3],
            out_channels: sw[1],
            kernel,
        };
        let cols = kernels::im2col(self.value(x).data(), &dims);
        let rows = dims.rows();
        let cout = dims.out_channels;
        let mut out = vec![0.0; rows * cout];
        gemm(rows, dims.patch(), cout, &cols, false, self.value(w).data(), false, &mut out, false);
        let bias = self.value(b).data();
        for row in out.chunks_mut(cout) {
            for (o, bb) in row.iter_mut().zip(bias) {
                *o += bb;
            }
        }
        let shape = vec![dims.batch, dims.out_time(), dims.sensors, cout];
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Conv { x, w, b, dims }, rg))
    }

    /// Multiplies by a fixed mask (already scaled by `1/keep` for inverted dropout).
    pub fn dropout(&mut self, a: Var, mask: Vec<f64>) -> Res<Var> {
        if mask.len() != self.value(a).numel() {
            return Err(shape_err("dropout", self.shape(a), &[mask.len()]));
        }
        let mut out = self.value(a).clone();
        for (o, m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Dropout { a, mask }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Res<Var> {
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::Sum { a }, rg))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Res<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| invalid("layer_norm", "scalar input"))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err("layer_norm", &shape, self.shape(gamma)));
        }
        if !self.value(x).is_finite() {
            return Err(TensorError::NonFinite { op: "layer_norm" });
        }
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let rows = xv.len() / d.max(1);
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + bt[j];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Class-weighted cross-entropy averaged by the total weight of the
    /// batch's true classes: `Σ w[y_i]·(−log p_i[y_i]) / Σ w[y_i]`.
    pub fn weighted_cross_entropy(&mut self, logits: Var, labels: &[usize], class_weights: &[f64]) -> Res<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(shape_err("weighted_cross_entropy", &shape, &[labels.len()]));
        }
        let n = shape[1];
        if class_weights.len() != n {
            return Err(shape_err("weighted_cross_entropy", &shape, &[class_weights.len()]));
        }
        if class_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid("weighted_cross_entropy", "class weights must be finite and nonnegative"));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= n) {
            return Err(TensorError::LabelOutOfRange { label, classes: n });
        }
        let z = self.value(logits);
        if !z.is_finite() {
            return Err(TensorError::NonFinite {
                op: "weighted_cross_entropy",
            });
        }
        let sample_w: Vec<f64> = labels.iter().map(|&y| class_weights[y]).collect();
        let denom: f64 = sample_w.iter().sum();
        if denom <= 0.0 {
            return Err(TensorError::ZeroWeightSum);
        }
        let mut probs = vec![0.0; z.numel()];
        let mut total = 0.0;
        for (i, row) in z.data().chunks(n.max(1)).enumerate() {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let lse = m + s.ln();
            for j in 0..n {
                probs[i * n + j] = (row[j] - lse).exp();
            }
            total += sample_w[i] * (lse - row[labels[i]]);
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(total / denom),
            Op::WeightedCe {
                logits,
                labels: labels.to_vec(),
                sample_w,
                probs,
                denom,
            },
            rg,
        ))
    }

    /// Back-propagates from a scalar `loss`. Every leaf recorded with
    /// `requires_grad` receives a gradient (zeros when it did not influence
    /// the loss).
    pub fn backward(&self, loss: Var) -> Res<Gradients> {
        let ls = self.shape(loss);
        if numel(ls) != 1 {
            return Err(TensorError::NonScalarLoss(ls.to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(ls, 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, g.data(), &mut grads);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) {
                if node.requires_grad && grads[i].is_none() {
                    grads[i] = Some(Tensor::zeros(node.value.shape()));
                }
            } else if i != loss.0 {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Tensor>], v: Var, delta: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, d) in g.data_mut().iter_mut().zip(&delta) {
                    *a += d;
                }
            }
            slot @ None => {
                let shape = self.nodes[v.0].value.shape().to_vec();
                *slot = Some(Tensor::new(shape, delta).expect("gradient shape"));
            }
        }
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Tensor>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, batched } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if !batched {
                    let (k, n) = (bv.shape()[0], bv.shape()[1]);
                    let m = numel(&av.shape()[..av.ndim() - 1]);
                    if self.requires_grad(*a) {
                        let mut da = vec![0.0; m * k];
                        gemm(m, n, k, g, false, bv.data(), true, &mut da, false);
                        self.accum(grads, *a, da);
                    }
                    if self.requires_grad(*b) {
                        let mut db = vec![0.0; k * n];
                        gemm(k, m, n, av.data(), true, g, false, &mut db, false);
                        self.accum(grads, *b, db);
                    }
                } else {
                    let (bt, m, k, n) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[2]);
                    if self.requires_grad(*a) {
                        let mut da = vec![0.0; bt * m * k];
                        for i in 0..bt {
                            gemm(m, n, k, &g[i * m * n..], false, &bv.data()[i * k * n..], true, &mut da[i * m * k..], false);
                        }
                        self.accum(grads, *a, da);
                    }
                    if self.requires_grad(*b) {
                        let mut db = vec![0.0; bt * k * n];
                        for i in 0..bt {
                            gemm(k, m, n, &av.data()[i * m * k..], true, &g[i * m * n..], false, &mut db[i * k * n..], false);
                        }
                        self.accum(grads, *b, db);
                    }
                }
            }
            Op::Add { a, b } => {
                self.accum(grads, *a, g.to_vec());
                if self.requires_grad(*b) {
                    let w = self.value(*b).numel();
                    let mut db = vec![0.0; w];
                    for chunk in g.chunks(w.max(1)) {
                        for (d, x) in db.iter_mut().zip(chunk) {
                            *d += x;
                        }
                    }
                    self.accum(grads, *b, db);
                }
            }
            Op::Mul { a, b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.requires_grad(*a) {
                    self.accum(grads, *a, g.iter().zip(bv).map(|(g, b)| g * b).collect());
                }
                if self.requires_grad(*b) {
                    self.accum(grads, *b, g.iter().zip(av).map(|(g, a)| g * a).collect());
                }
            }
            Op::Scale { a, c } => self.accum(grads, *a, g.iter().map(|v| v * c).collect()),
            Op::Sigmoid { a } => {
                self.accum(grads, *a, g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect())
            }
            Op::Tanh { a } => {
                self.accum(grads, *a, g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect())
            }
            Op::Relu { a } => {
                let x = self.value(*a).data();
                self.accum(
                    grads,
                    *a,
                    g.iter().zip(x).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect(),
                )
            }
            Op::Gelu { a } => {
                let x = self.value(*a).data();
                self.accum(grads, *a, g.iter().zip(x).map(|(g, x)| g * kernels::gelu_grad(*x)).collect())
            }
            Op::Softmax { a } => {
                let w = *node.value.shape().last().unwrap();
                let mut dx = vec![0.0; g.len()];
                for ((gr, yr), dr) in g.chunks(w).zip(y.chunks(w)).zip(dx.chunks_mut(w)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    for j in 0..w {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accum(grads, *a, dx);
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let len = self.shape(*p)[*axis];
                    if self.requires_grad(*p) {
                        let d = kernels::slice_axis(g, outer, total, inner, offset, len);
                        self.accum(grads, *p, d);
                    }
                    offset += len;
                }
            }
            Op::Slice { a, axis, start } => {
                let src_shape = self.shape(*a);
                let (outer, n, inner) = axis_split(src_shape, *axis);
                let len = node.value.shape()[*axis];
                let mut da = vec![0.0; numel(src_shape)];
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    da[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                self.accum(grads, *a, da);
            }
            Op::Reshape { a } => self.accum(grads, *a, g.to_vec()),
            Op::Permute { a, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inverse[ax] = i;
                }
                self.accum(grads, *a, kernels::permute(g, node.value.shape(), &inverse));
            }
            Op::Conv { x, w, b, dims } => {
                let rows = dims.rows();
                let cout = dims.out_channels;
                let patch = dims.patch();
                if self.requires_grad(*w) {
                    let cols = kernels::im2col(self.value(*x).data(), dims);
                    let mut dw = vec![0.0; patch * cout];
                    gemm(patch, rows, cout, &cols, true, g, false, &mut dw, false);
                    self.accum(grads, *w, dw);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; cout];
                    for row in g.chunks(cout) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accum(grads, *b, db);
                }
                if self.requires_grad(*x) {
                    let mut dcols = vec![0.0; rows * patch];
                    gemm(rows, cout, patch, g, false, self.value(*w).data(), true, &mut dcols, false);
                    let mut dx = vec![0.0; self.value(*x).numel()];
                    kernels::col2im(&dcols, dims, &mut dx);
                    self.accum(grads, *x, dx);
                }
            }
            Op::Dropout { a, mask } => {
                self.accum(grads, *a, g.iter().zip(mask).map(|(g, m)| g * m).collect())
            }
            Op::Sum { a } => {
                let n = self.value(*a).numel();
                self.accum(grads, *a, vec![g[0]; n]);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = self.value(*gamma).numel();
                let gv = self.value(*gamma).data();
                let rows = g.len() / d.max(1);
                if self.requires_grad(*gamma) || self.requires_grad(*beta) {
                    let mut dg = vec![0.0; d];
                    let mut db = vec![0.0; d];
                    for r in 0..rows {
                        for j in 0..d {
                            dg[j] += g[r * d + j] * xhat[r * d + j];
                            db[j] += g[r * d + j];
                        }
                    }
                    self.accum(grads, *gamma, dg);
                    self.accum(grads, *beta, db);
                }
                if self.requires_grad(*x) {
                    let mut dx = vec![0.0; g.len()];
                    for r in 0..rows {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..d {
                            let dh = g[r * d + j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * xhat[r * d + j];
                        }
                        mean_dh /= d as f64;
                        mean_dh_h /= d as f64;
                        for j in 0..d {
                            let dh = g[r * d + j] * gv[j];
                            dx[r * d + j] = rstd[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
                        }
                    }
                    self.accum(grads, *x, dx);
                }
            }
            Op::WeightedCe {
                logits,
                labels,
                sample_w,
                probs,
                denom,
            } => {
                let n = self.shape(*logits)[1];
                let mut dz = vec![0.0; probs.len()];
                for (i, &y) in labels.iter().enumerate() {
                    let s = g[0] * sample_w[i] / denom;
                    for j in 0..n {
                        let onehot = if j == y { 1.0 } else { 0.0 };
                        dz[i * n + j] = s * (probs[i * n + j] - onehot);
                    }
                }
                self.accum(grads, *logits, dz);
            }
        }
    }
}
