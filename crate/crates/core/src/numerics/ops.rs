//! Differentiable operations recorded on a [`Tape`](super::Tape).

use serde::{Deserialize, Serialize};

use super::tape::{accumulate, Node, Var};
use super::tensor::{dot, gemm_acc, gemm_nt_acc, gemm_strided, gemm_tn_acc, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
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

/// Running statistics carried by a batch-normalization layer between steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(dim: usize) -> Self {
        Self {
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

pub(crate) enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulNt(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Affine { x: usize, scale: f64 },
    AddRowBias { x: usize, bias: usize },
    Act { x: usize, kind: Activation },
    SoftmaxRows(usize),
    Conv1d { x: usize, w: usize, b: usize, n: usize, cin: usize, cout: usize, len: usize, k: usize },
    MaxPool1d { x: usize, argmax: Vec<usize> },
    Reshape(usize),
    SliceRows { x: usize, offset: usize },
    SliceCols { x: usize, start: usize, width: usize, cols: usize },
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SumN(Vec<usize>),
    SumRows(usize),
    GroupMeanRows { x: usize, group: usize },
    SumAll(usize),
    SquaredNorm(usize),
    AbsSum(usize),
    BatchNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    CrossEntropy { logits: usize, labels: Vec<usize>, probs: Vec<f64> },
}

fn same_tape(a: Var<'_>, b: Var<'_>) {
    assert!(
        std::ptr::eq(a.tape, b.tape),
        "variables from different tapes cannot be combined"
    );
}

impl<'t> Var<'t> {
    fn unary(self, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(self, other: Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        same_tape(self, other);
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn nary(vars: &[Var<'t>], value: Tensor, op: Op) -> Var<'t> {
        let tape = vars[0].tape;
        vars.iter().for_each(|v| same_tape(vars[0], *v));
        let rg = vars.iter().any(|v| v.requires_grad());
        tape.push(value, op, rg)
    }

    /// Matrix product `self[m×k] · other[k×p]`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        let (m, k) = a.dims2()?;
        let (k2, p) = b.dims2()?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", a.shape(), b.shape()),
            ));
        }
        let mut out = vec![0.0; m * p];
        gemm_acc(a.data(), b.data(), &mut out, m, k, p);
        Ok(self.binary(
            other,
            Tensor::from_parts(vec![m, p], out),
            Op::MatMul(self.id, other.id),
        ))
    }

    /// `self[m×k] · other[p×k]ᵀ`.
    pub fn matmul_nt(self, other: Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        let (m, k) = a.dims2()?;
        let (p, k2) = b.dims2()?;
        if k != k2 {
            return Err(Error::shape(
                "matmul_nt",
                format!("{:?} x {:?}ᵀ", a.shape(), b.shape()),
            ));
        }
        let mut out = vec![0.0; m * p];
        gemm_nt_acc(a.data(), b.data(), &mut out, m, k, p);
        Ok(self.binary(
            other,
            Tensor::from_parts(vec![m, p], out),
            Op::MatMulNt(self.id, other.id),
        ))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let t = self.value().transposed()?;
        Ok(self.unary(t, Op::Transpose(self.id)))
    }

    fn zip_with(self, other: Var<'t>, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let a = self.value();
        let b = other.value();
        if a.shape() != b.shape() {
            return Err(Error::shape(
                name,
                format!("{:?} vs {:?}", a.shape(), b.shape()),
            ));
        }
        let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok(Tensor::from_parts(a.shape().to_vec(), data))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let t = self.zip_with(other, "add", |x, y| x + y)?;
        Ok(self.binary(other, t, Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let t = self.zip_with(other, "sub", |x, y| x - y)?;
        Ok(self.binary(other, t, Op::Sub(self.id, other.id)))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let t = self.zip_with(other, "mul", |x, y| x * y)?;
        Ok(self.binary(other, t, Op::Mul(self.id, other.id)))
    }

    /// `scale · self + shift`, elementwise.
    pub fn affine(self, scale: f64, shift: f64) -> Var<'t> {
        let t = self.value().map(|x| scale * x + shift);
        self.unary(t, Op::Affine { x: self.id, scale })
    }

    pub fn scale(self, factor: f64) -> Var<'t> {
        self.affine(factor, 0.0)
    }

    /// Adds `bias[c]` to every row of `self[r×c]` (or every trailing `c`-block).
    pub fn add_row_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        let x = self.value();
        let b = bias.value();
        let c = *x.shape().last().unwrap_or(&0);
        if b.numel() != c || c == 0 {
            return Err(Error::shape(
                "add_row_bias",
                format!("{:?} + bias {:?}", x.shape(), b.shape()),
            ));
        }
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(c) {
            for (v, bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
        Ok(self.binary(
            bias,
            Tensor::from_parts(x.shape().to_vec(), data),
            Op::AddRowBias { x: self.id, bias: bias.id },
        ))
    }

    pub fn activation(self, kind: Activation) -> Var<'t> {
        let t = self.value().map(|x| kind.apply(x));
        self.unary(t, Op::Act { x: self.id, kind })
    }

    pub fn relu(self) -> Var<'t> {
        self.activation(Activation::Relu)
    }

    pub fn tanh(self) -> Var<'t> {
        self.activation(Activation::Tanh)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.activation(Activation::Sigmoid)
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax_rows(self) -> Var<'t> {
        let x = self.value();
        let c = *x.shape().last().unwrap_or(&1);
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(c) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        self.unary(
            Tensor::from_parts(x.shape().to_vec(), data),
            Op::SoftmaxRows(self.id),
        )
    }

    /// Valid cross-correlation with stride 1.
    ///
    /// `self` is `[cin×L]` or a batch `[n×cin×L]`, `kernels` is `[cout×cin×k]`, `bias` is
    /// `[cout]`. The output keeps the input's rank with length `L − k + 1`.
    pub fn conv1d(self, kernels: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        let x = self.value();
        let w = kernels.value();
        let b = bias.value();
        let (n, cin, len, batched) = match x.shape() {
            &[cin, len] => (1, cin, len, false),
            &[n, cin, len] => (n, cin, len, true),
            s => return Err(Error::shape("conv1d", format!("input shape {s:?}"))),
        };
        let (cout, k) = match w.shape() {
            &[cout, c, k] if c == cin => (cout, k),
            s => {
                return Err(Error::shape(
                    "conv1d",
                    format!("kernels {s:?} for {cin} input channels"),
                ))
            }
        };
        if b.numel() != cout {
            return Err(Error::shape("conv1d", format!("bias {:?}", b.shape())));
        }
        if len < k || k == 0 {
            return Err(Error::shape(
                "conv1d",
                format!("sequence length {len} shorter than kernel {k}"),
            ));
        }
        let lout = len - k + 1;
        let xc = channel_major(x.data(), n, cin, len);
        let full = conv_full(&xc, w.data(), n, cin, cout, len, k);
        let span = n * len - k + 1;
        let mut out = vec![0.0; n * cout * lout];
        for s in 0..n {
            for co in 0..cout {
                let bias = b.data()[co];
                let src = &full[co * span + s * len..co * span + s * len + lout];
                let dst = &mut out[(s * cout + co) * lout..(s * cout + co + 1) * lout];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d = v + bias;
                }
            }
        }
        let shape = if batched {
            vec![n, cout, lout]
        } else {
            vec![cout, lout]
        };
        Ok(Var::nary(
            &[self, kernels, bias],
            Tensor::from_parts(shape, out),
            Op::Conv1d { x: self.id, w: kernels.id, b: bias.id, n, cin, cout, len, k },
        ))
    }

    /// Non-overlapping max pooling over the last axis; a trailing remainder shorter than
    /// `k` is dropped. Ties route the gradient to the first maximal index.
    pub fn maxpool1d(self, k: usize) -> Result<Var<'t>> {
        let x = self.value();
        let len = *x.shape().last().unwrap_or(&0);
        if k == 0 || len < k {
            return Err(Error::shape(
                "maxpool1d",
                format!("window {k} on length {len}"),
            ));
        }
        let lout = len / k;
        let rows = x.numel() / len;
        let mut out = Vec::with_capacity(rows * lout);
        let mut argmax = Vec::with_capacity(rows * lout);
        for r in 0..rows {
            let row = &x.data()[r * len..(r + 1) * len];
            for w in 0..lout {
                let mut best = w * k;
                for i in w * k + 1..(w + 1) * k {
                    if row[i] > row[best] {
                        best = i;
                    }
                }
                out.push(row[best]);
                argmax.push(r * len + best);
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = lout;
        Ok(self.unary(
            Tensor::from_parts(shape, out),
            Op::MaxPool1d { x: self.id, argmax },
        ))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let t = (*self.value()).clone().reshaped(shape)?;
        Ok(self.unary(t, Op::Reshape(self.id)))
    }

    /// Rows `start..end` along the leading axis.
    pub fn slice_rows(self, start: usize, end: usize) -> Result<Var<'t>> {
        let x = self.value();
        let r = x.shape().first().copied().unwrap_or(0);
        if start > end || end > r {
            return Err(Error::shape(
                "slice_rows",
                format!("{start}..{end} of {r} rows"),
            ));
        }
        let inner = x.numel() / r.max(1);
        let mut shape = x.shape().to_vec();
        shape[0] = end - start;
        let data = x.data()[start * inner..end * inner].to_vec();
        Ok(self.unary(
            Tensor::from_parts(shape, data),
            Op::SliceRows { x: self.id, offset: start * inner },
        ))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = x.dims2()?;
        if start > end || end > c {
            return Err(Error::shape(
                "slice_cols",
                format!("{start}..{end} of {c} columns"),
            ));
        }
        let width = end - start;
        let mut data = Vec::with_capacity(r * width);
        for i in 0..r {
            data.extend_from_slice(&x.data()[i * c + start..i * c + end]);
        }
        Ok(self.unary(
            Tensor::from_parts(vec![r, width], data),
            Op::SliceCols { x: self.id, start, width, cols: c },
        ))
    }

    /// Stacks along the leading axis; trailing shapes must agree.
    pub fn concat_rows(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_rows", "no inputs"))?
            .value();
        let tail = &first.shape()[1..];
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let v = p.value();
            if &v.shape()[1..] != tail {
                return Err(Error::shape(
                    "concat_rows",
                    format!("{:?} vs {:?}", v.shape(), first.shape()),
                ));
            }
            rows += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = first.shape().to_vec();
        shape[0] = rows;
        Ok(Var::nary(
            parts,
            Tensor::from_parts(shape, data),
            Op::ConcatRows(parts.iter().map(|p| p.id).collect()),
        ))
    }

    /// Joins matrices side by side; row counts must agree.
    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let vals: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let r = vals
            .first()
            .ok_or_else(|| Error::shape("concat_cols", "no inputs"))?
            .dims2()?
            .0;
        let mut widths = Vec::with_capacity(vals.len());
        for v in &vals {
            let (vr, vc) = v.dims2()?;
            if vr != r {
                return Err(Error::shape("concat_cols", format!("{vr} rows vs {r}")));
            }
            widths.push(vc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (v, &w) in vals.iter().zip(&widths) {
                data.extend_from_slice(&v.data()[i * w..(i + 1) * w]);
            }
        }
        Ok(Var::nary(
            parts,
            Tensor::from_parts(vec![r, total], data),
            Op::ConcatCols(parts.iter().map(|p| p.id).collect()),
        ))
    }

    /// Elementwise sum of equally shaped variables.
    pub fn sum_n(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("sum_n", "no inputs"))?
            .value();
        let mut data = vec![0.0; first.numel()];
        for p in parts {
            let v = p.value();
            if v.shape() != first.shape() {
                return Err(Error::shape(
                    "sum_n",
                    format!("{:?} vs {:?}", v.shape(), first.shape()),
                ));
            }
            for (d, x) in data.iter_mut().zip(v.data()) {
                *d += x;
            }
        }
        Ok(Var::nary(
            parts,
            Tensor::from_parts(first.shape().to_vec(), data),
            Op::SumN(parts.iter().map(|p| p.id).collect()),
        ))
    }

    /// Column sums of `[r×c]`, giving `[1×c]`.
    pub fn sum_rows(self) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = x.dims2()?;
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(x.row(i)) {
                *o += v;
            }
        }
        Ok(self.unary(Tensor::from_parts(vec![1, c], out), Op::SumRows(self.id)))
    }

    /// Averages consecutive groups of `group` rows: `[g·group × c]` to `[g × c]`.
    pub fn group_mean_rows(self, group: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = x.dims2()?;
        if group == 0 || r % group != 0 {
            return Err(Error::shape(
                "group_mean_rows",
                format!("{r} rows in groups of {group}"),
            ));
        }
        let g = r / group;
        let mut out = vec![0.0; g * c];
        for i in 0..r {
            let o = &mut out[(i / group) * c..(i / group + 1) * c];
            for (ov, xv) in o.iter_mut().zip(x.row(i)) {
                *ov += xv / group as f64;
            }
        }
        Ok(self.unary(
            Tensor::from_parts(vec![g, c], out),
            Op::GroupMeanRows { x: self.id, group },
        ))
    }

    pub fn sum_all(self) -> Var<'t> {
        let s = self.value().sum();
        self.unary(Tensor::scalar(s), Op::SumAll(self.id))
    }

    pub fn mean_all(self) -> Var<'t> {
        let n = self.value().numel().max(1);
        self.sum_all().scale(1.0 / n as f64)
    }

    /// Σ x², i.e. the squared Frobenius norm.
    pub fn squared_norm(self) -> Var<'t> {
        let s = self.value().data().iter().map(|x| x * x).sum();
        self.unary(Tensor::scalar(s), Op::SquaredNorm(self.id))
    }

    /// Σ |x|; subgradient 0 at 0.
    pub fn abs_sum(self) -> Var<'t> {
        let s = self.value().data().iter().map(|x| x.abs()).sum();
        self.unary(Tensor::scalar(s), Op::AbsSum(self.id))
    }

    /// Batch normalization over the rows of `self[batch×d]`.
    ///
    /// Train mode standardizes with the biased batch statistics and folds them into
    /// `state` with its momentum; eval mode uses the running statistics.
    pub fn batchnorm_1d(
        self,
        gamma: Var<'t>,
        beta: Var<'t>,
        state: &mut BatchNormState,
        mode: Mode,
    ) -> Result<Var<'t>> {
        let x = self.value();
        let (bsz, d) = x.dims2()?;
        if gamma.value().numel() != d || beta.value().numel() != d {
            return Err(Error::shape("batchnorm_1d", "affine size mismatch"));
        }
        if state.running_mean.len() != d || state.running_var.len() != d {
            return Err(Error::shape("batchnorm_1d", "running statistics size mismatch"));
        }
        let (mean, var) = match mode {
            Mode::Train => {
                if bsz < 2 {
                    return Err(Error::InvalidArgument(
                        "batchnorm_1d in train mode needs a batch of at least 2".into(),
                    ));
                }
                let mut mean = vec![0.0; d];
                let mut var = vec![0.0; d];
                for i in 0..bsz {
                    for (m, v) in mean.iter_mut().zip(x.row(i)) {
                        *m += v / bsz as f64;
                    }
                }
                for i in 0..bsz {
                    for j in 0..d {
                        let dv = x.at(i, j) - mean[j];
                        var[j] += dv * dv / bsz as f64;
                    }
                }
                let mo = state.momentum;
                for j in 0..d {
                    state.running_mean[j] = (1.0 - mo) * state.running_mean[j] + mo * mean[j];
                    state.running_var[j] = (1.0 - mo) * state.running_var[j] + mo * var[j];
                }
                (mean, var)
            }
            Mode::Eval => {
                if bsz < 1 {
                    return Err(Error::InvalidArgument("batchnorm_1d on empty batch".into()));
                }
                (state.running_mean.clone(), state.running_var.clone())
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
        let g = gamma.value();
        let b = beta.value();
        let mut xhat = vec![0.0; bsz * d];
        let mut out = vec![0.0; bsz * d];
        for i in 0..bsz {
            for j in 0..d {
                let h = (x.at(i, j) - mean[j]) * inv_std[j];
                xhat[i * d + j] = h;
                out[i * d + j] = g.data()[j] * h + b.data()[j];
            }
        }
        Ok(Var::nary(
            &[self, gamma, beta],
            Tensor::from_parts(vec![bsz, d], out),
            Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            },
        ))
    }

    /// Mean over the batch of `−log softmax(logits)[label]`.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Var<'t>> {
        let z = self.value();
        let (bsz, c) = z.dims2()?;
        if labels.len() != bsz {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} labels for batch of {bsz}", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let mut probs = vec![0.0; bsz * c];
        let mut loss = 0.0;
        for i in 0..bsz {
            let row = z.row(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[labels[i]];
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
        }
        Ok(self.unary(
            Tensor::scalar(loss / bsz as f64),
            Op::CrossEntropy { logits: self.id, labels: labels.to_vec(), probs },
        ))
    }
}

impl Op {
    /// Propagates `g` (the gradient of this node's output) into its inputs.
    pub(crate) fn backward(
        &self,
        out: &Tensor,
        g: &[f64],
        nodes: &[Node],
        pending: &mut [Option<Vec<f64>>],
    ) {
        let val = |id: usize| &*nodes[id].value;
        match self {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2().unwrap();
                let p = val(*b).cols();
                let bv = val(*b).data();
                let av = val(*a).data();
                accumulate(nodes, pending, *a, |da| gemm_nt_acc(g, bv, da, m, p, k));
                accumulate(nodes, pending, *b, |db| gemm_tn_acc(av, g, db, m, k, p));
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = val(*a).dims2().unwrap();
                let p = val(*b).rows();
                let bv = val(*b).data();
                let av = val(*a).data();
                accumulate(nodes, pending, *a, |da| gemm_acc(g, bv, da, m, p, k));
                accumulate(nodes, pending, *b, |db| gemm_tn_acc(g, av, db, m, p, k));
            }
            Op::Transpose(x) => {
                let (r, c) = val(*x).dims2().unwrap();
                accumulate(nodes, pending, *x, |dx| {
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                accumulate(nodes, pending, *a, |d| add_into(d, g));
                accumulate(nodes, pending, *b, |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                accumulate(nodes, pending, *a, |d| add_into(d, g));
                accumulate(nodes, pending, *b, |d| {
                    d.iter_mut().zip(g).for_each(|(x, y)| *x -= y)
                });
            }
            Op::Mul(a, b) => {
                let av = val(*a).data();
                let bv = val(*b).data();
                accumulate(nodes, pending, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * bv[i];
                    }
                });
                accumulate(nodes, pending, *b, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * av[i];
                    }
                });
            }
            Op::Affine { x, scale } => {
                accumulate(nodes, pending, *x, |d| {
                    d.iter_mut().zip(g).for_each(|(dv, gv)| *dv += scale * gv)
                });
            }
            Op::AddRowBias { x, bias } => {
                accumulate(nodes, pending, *x, |d| add_into(d, g));
                let c = val(*bias).numel();
                accumulate(nodes, pending, *bias, |d| {
                    for row in g.chunks(c) {
                        add_into(d, row);
                    }
                });
            }
            Op::Act { x, kind } => {
                let xv = val(*x).data();
                let y = out.data();
                accumulate(nodes, pending, *x, |d| match kind {
                    Activation::Relu => {
                        for i in 0..d.len() {
                            if xv[i] > 0.0 {
                                d[i] += g[i];
                            }
                        }
                    }
                    Activation::Tanh => {
                        for i in 0..d.len() {
                            d[i] += g[i] * (1.0 - y[i] * y[i]);
                        }
                    }
                    Activation::Sigmoid => {
                        for i in 0..d.len() {
                            d[i] += g[i] * y[i] * (1.0 - y[i]);
                        }
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let c = *out.shape().last().unwrap();
                let y = out.data();
                accumulate(nodes, pending, *x, |d| {
                    for ((dr, yr), gr) in d.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                        let s = dot(yr, gr);
                        for j in 0..c {
                            dr[j] += yr[j] * (gr[j] - s);
                        }
                    }
                });
            }
            &Op::Conv1d { x, w, b, n, cin, cout, len, k } => {
                let lout = len - k + 1;
                accumulate(nodes, pending, b, |db| {
                    for s in 0..n {
                        for co in 0..cout {
                            let base = (s * cout + co) * lout;
                            db[co] += g[base..base + lout].iter().sum::<f64>();
                        }
                    }
                });
                if !(nodes[w].requires_grad || nodes[x].requires_grad) {
                    return;
                }
                // channel-major gradient with k−1 zero columns on both sides; the gaps
                // between samples are zero as well
                let span = n * len - k + 1;
                let padded = n * len + k - 1;
                let mut gp = vec![0.0; cout * padded];
                for co in 0..cout {
                    for s in 0..n {
                        let base = (s * cout + co) * lout;
                        let at = co * padded + (k - 1) + s * len;
                        gp[at..at + lout].copy_from_slice(&g[base..base + lout]);
                    }
                }
                accumulate(nodes, pending, w, |dw| {
                    let xc = channel_major(val(x).data(), n, cin, len);
                    for ci in 0..cin {
                        // dW[co, ci, j] = Σ_m G[co, m] · x_ci[m + j]
                        gemm_strided(
                            cout,
                            span,
                            k,
                            &gp[k - 1..],
                            (padded, 1),
                            &xc[ci * n * len..],
                            (1, 1),
                            &mut dw[ci * k..],
                            (cin * k, 1),
                        );
                    }
                });
                accumulate(nodes, pending, x, |dx| {
                    // full correlation of the padded gradient with the flipped kernels
                    let wd = val(w).data();
                    let mut flipped = vec![0.0; cout * cin * k];
                    for co in 0..cout {
                        for ci in 0..cin {
                            for j in 0..k {
                                flipped[(ci * cout + co) * k + j] = wd[(co * cin + ci) * k + (k - 1 - j)];
                            }
                        }
                    }
                    let mut dxc = vec![0.0; cin * n * len];
                    for co in 0..cout {
                        gemm_strided(
                            cin,
                            k,
                            n * len,
                            &flipped[co * k..],
                            (cout * k, 1),
                            &gp[co * padded..],
                            (1, 1),
                            &mut dxc,
                            (n * len, 1),
                        );
                    }
                    for s in 0..n {
                        for ci in 0..cin {
                            let src = &dxc[ci * n * len + s * len..ci * n * len + (s + 1) * len];
                            for (d, v) in dx[(s * cin + ci) * len..(s * cin + ci + 1) * len].iter_mut().zip(src) {
                                *d += v;
                            }
                        }
                    }
                });
            }
            Op::MaxPool1d { x, argmax } => {
                accumulate(nodes, pending, *x, |d| {
                    for (gv, &i) in g.iter().zip(argmax) {
                        d[i] += gv;
                    }
                });
            }
            Op::Reshape(x) => accumulate(nodes, pending, *x, |d| add_into(d, g)),
            Op::SliceRows { x, offset } => {
                accumulate(nodes, pending, *x, |d| {
                    add_into(&mut d[*offset..*offset + g.len()], g)
                });
            }
            Op::SliceCols { x, start, width, cols } => {
                accumulate(nodes, pending, *x, |d| {
                    for (i, gr) in g.chunks(*width).enumerate() {
                        add_into(&mut d[i * cols + start..i * cols + start + width], gr);
                    }
                });
            }
            Op::ConcatRows(ids) => {
                let mut offset = 0;
                for &id in ids {
                    let n = val(id).numel();
                    accumulate(nodes, pending, id, |d| add_into(d, &g[offset..offset + n]));
                    offset += n;
                }
            }
            Op::ConcatCols(ids) => {
                let total = out.cols();
                let mut start = 0;
                for &id in ids {
                    let (r, w) = val(id).dims2().unwrap();
                    accumulate(nodes, pending, id, |d| {
                        for i in 0..r {
                            add_into(
                                &mut d[i * w..(i + 1) * w],
                                &g[i * total + start..i * total + start + w],
                            );
                        }
                    });
                    start += w;
                }
            }
            Op::SumN(ids) => {
                for &id in ids {
                    accumulate(nodes, pending, id, |d| add_into(d, g));
                }
            }
            Op::SumRows(x) => {
                let c = g.len();
                accumulate(nodes, pending, *x, |d| {
                    for row in d.chunks_mut(c) {
                        add_into(row, g);
                    }
                });
            }
            Op::GroupMeanRows { x, group } => {
                let c = out.cols();
                let inv = 1.0 / *group as f64;
                accumulate(nodes, pending, *x, |d| {
                    for (i, row) in d.chunks_mut(c).enumerate() {
                        let gr = &g[(i / group) * c..(i / group + 1) * c];
                        row.iter_mut().zip(gr).for_each(|(dv, gv)| *dv += gv * inv);
                    }
                });
            }
            Op::SumAll(x) => {
                accumulate(nodes, pending, *x, |d| d.iter_mut().for_each(|v| *v += g[0]));
            }
            Op::SquaredNorm(x) => {
                let xv = val(*x).data();
                accumulate(nodes, pending, *x, |d| {
                    d.iter_mut().zip(xv).for_each(|(dv, v)| *dv += 2.0 * v * g[0])
                });
            }
            Op::AbsSum(x) => {
                let xv = val(*x).data();
                accumulate(nodes, pending, *x, |d| {
                    d.iter_mut().zip(xv).for_each(|(dv, &v)| {
                        if v > 0.0 {
                            *dv += g[0];
                        } else if v < 0.0 {
                            *dv -= g[0];
                        }
                    })
                });
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let d = inv_std.len();
                let bsz = xhat.len() / d;
                let gam = val(*gamma).data();
                accumulate(nodes, pending, *beta, |db| {
                    for row in g.chunks(d) {
                        add_into(db, row);
                    }
                });
                accumulate(nodes, pending, *gamma, |dg| {
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                });
                accumulate(nodes, pending, *x, |dx| {
                    if *train {
                        let nb = bsz as f64;
                        for j in 0..d {
                            let mut s1 = 0.0;
                            let mut s2 = 0.0;
                            for i in 0..bsz {
                                let dh = g[i * d + j] * gam[j];
                                s1 += dh;
                                s2 += dh * xhat[i * d + j];
                            }
                            for i in 0..bsz {
                                let dh = g[i * d + j] * gam[j];
                                dx[i * d + j] +=
                                    inv_std[j] / nb * (nb * dh - s1 - xhat[i * d + j] * s2);
                            }
                        }
                    } else {
                        for i in 0..bsz {
                            for j in 0..d {
                                dx[i * d + j] += g[i * d + j] * gam[j] * inv_std[j];
                            }
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let bsz = labels.len();
                let c = probs.len() / bsz;
                let scale = g[0] / bsz as f64;
                accumulate(nodes, pending, *logits, |d| {
                    for i in 0..bsz {
                        for j in 0..c {
                            let t = if labels[i] == j { 1.0 } else { 0.0 };
                            d[i * c + j] += scale * (probs[i * c + j] - t);
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// `[n × c × len]` → `[c × n·len]`.
fn channel_major(x: &[f64], n: usize, c: usize, len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for ci in 0..c {
        for s in 0..n {
            out.extend_from_slice(&x[(s * c + ci) * len..(s * c + ci + 1) * len]);
        }
    }
    out
}

/// Correlation over the concatenated channel-major series, `[cout × (n·len − k + 1)]`.
/// Columns `s·len + l` with `l < len − k + 1` are the valid outputs of sample `s`; the
/// rest straddle two samples and are discarded by the caller.
fn conv_full(xc: &[f64], w: &[f64], n: usize, cin: usize, cout: usize, len: usize, k: usize) -> Vec<f64> {
    let span = n * len - k + 1;
    let mut y = vec![0.0; cout * span];
    for ci in 0..cin {
        // B[j, m] = x_ci[m + j] is a Toeplitz view with unit strides
        gemm_strided(
            cout,
            k,
            span,
            &w[ci * k..],
            (cin * k, 1),
            &xc[ci * n * len..],
            (1, 1),
            &mut y,
            (span, 1),
        );
    }
    y
}

#[cfg(test)]
mod tests {
    use super::super::Tape;
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let tape = Tape::new();
        let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let col = tape.constant(t(&[2, 1], &[5.0, 6.0]));
        assert_eq!(m.matmul(col).unwrap().value().data(), &[17.0, 39.0]);
        let eye = tape.constant(Tensor::eye(2));
        assert_eq!(eye.matmul(m).unwrap().value().data(), m.value().data());
        let zero = tape.constant(Tensor::zeros([2, 2]));
        assert_eq!(zero.matmul(m).unwrap().value().data(), &[0.0; 4]);
        assert!(m.matmul(tape.constant(Tensor::zeros([3, 1]))).is_err());
    }

    #[test]
    fn activation_examples() {
        let tape = Tape::new();
        let x = tape.constant(t(&[3], &[-1.0, 0.0, 0.0]));
        assert_eq!(x.relu().value().data()[0], 0.0);
        assert_eq!(x.tanh().value().data()[1], 0.0);
        assert_eq!(x.sigmoid().value().data()[2], 0.5);
    }

    #[test]
    fn conv1d_examples() {
        let tape = Tape::new();
        let x = tape.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
        let w = tape.constant(t(&[1, 1, 2], &[1.0, 1.0]));
        let b = tape.constant(t(&[1], &[0.0]));
        assert_eq!(x.conv1d(w, b).unwrap().value().data(), &[3.0, 5.0]);
        let id = tape.constant(t(&[1, 1, 1], &[1.0]));
        assert_eq!(x.conv1d(id, b).unwrap().value().data(), &[1.0, 2.0, 3.0]);
        let long = tape.constant(t(&[1, 1, 4], &[1.0; 4]));
        assert!(x.conv1d(long, b).is_err());
    }

    #[test]
    fn maxpool_examples() {
        let tape = Tape::new();
        let x = tape.constant(t(&[1, 4], &[1.0, 3.0, 2.0, 5.0]));
        assert_eq!(x.maxpool1d(2).unwrap().value().data(), &[3.0, 5.0]);
        assert_eq!(x.maxpool1d(1).unwrap().value().data(), x.value().data());
        let c = tape.constant(t(&[1, 5], &[2.0; 5]));
        assert_eq!(c.maxpool1d(2).unwrap().value().data(), &[2.0, 2.0]);
        assert!(x.maxpool1d(5).is_err());
    }

    #[test]
    fn maxpool_tie_routes_to_first_index() {
        let tape = Tape::new();
        let x = tape.param(t(&[1, 2], &[4.0, 4.0]));
        let y = x.maxpool1d(2).unwrap().sum_all();
        tape.backward(y).unwrap();
        assert_eq!(x.grad().data(), &[1.0, 0.0]);
    }

    #[test]
    fn softmax_examples() {
        let tape = Tape::new();
        let x = tape.constant(t(&[2, 3], &[0.0, 0.0, 0.0, 1f64.ln(), 2f64.ln(), 3f64.ln()]));
        let y = x.softmax_rows().value();
        for j in 0..3 {
            assert!((y.at(0, j) - 1.0 / 3.0).abs() < 1e-15);
            assert!((y.at(1, j) - (j + 1) as f64 / 6.0).abs() < 1e-15);
        }
        let two = tape.constant(t(&[1, 2], &[0.0, 0.0])).softmax_rows().value();
        assert_eq!(two.data(), &[0.5, 0.5]);
    }

    #[test]
    fn batchnorm_examples() {
        let tape = Tape::new();
        let gamma = tape.constant(Tensor::ones([1]));
        let beta = tape.constant(Tensor::zeros([1]));

        let mut st = BatchNormState::new(1);
        let flat = tape.constant(t(&[3, 1], &[2.0, 2.0, 2.0]));
        let y = flat.batchnorm_1d(gamma, beta, &mut st, Mode::Train).unwrap().value();
        assert!(y.data().iter().all(|v| v.abs() <= 1e-2));

        let mut st = BatchNormState::new(1);
        let x = tape.constant(t(&[2, 1], &[1.0, 3.0]));
        let y = x.batchnorm_1d(gamma, beta, &mut st, Mode::Train).unwrap().value();
        assert!((y.data()[0] + 1.0).abs() < 1e-5 && (y.data()[1] - 1.0).abs() < 1e-5);

        let mut st = BatchNormState::new(1);
        st.momentum = 1.0;
        let train = x.batchnorm_1d(gamma, beta, &mut st, Mode::Train).unwrap().value();
        let eval = x.batchnorm_1d(gamma, beta, &mut st, Mode::Eval).unwrap().value();
        assert!(train.max_abs_diff(&eval) < 1e-12);

        let single = tape.constant(t(&[1, 1], &[1.0]));
        assert!(single.batchnorm_1d(gamma, beta, &mut st, Mode::Train).is_err());
        assert!(single.batchnorm_1d(gamma, beta, &mut st, Mode::Eval).is_ok());
    }

    #[test]
    fn cross_entropy_examples() {
        let tape = Tape::new();
        let eq = tape.constant(t(&[1, 2], &[0.3, 0.3]));
        assert!((eq.cross_entropy(&[1]).unwrap().item() - 2f64.ln()).abs() < 1e-12);
        let z = tape.constant(t(&[1, 2], &[0.0, 3f64.ln()]));
        let l = z.cross_entropy(&[1]).unwrap().item();
        assert!((l + (0.75f64).ln()).abs() < 1e-12);
        assert!((l - 0.2877).abs() < 1e-4);
        let big = tape.constant(t(&[1, 2], &[0.0, 800.0]));
        assert!(big.cross_entropy(&[1]).unwrap().item() < 1e-300);
        assert!(z.cross_entropy(&[2]).is_err());
    }

    #[test]
    fn group_mean_rows_averages_blocks() {
        let tape = Tape::new();
        let x = tape.constant(t(&[4, 1], &[1.0, 3.0, 5.0, 9.0]));
        assert_eq!(x.group_mean_rows(2).unwrap().value().data(), &[2.0, 7.0]);
        assert!(x.group_mean_rows(3).is_err());
    }
}
