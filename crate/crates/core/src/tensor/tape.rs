use std::rc::Rc;

use super::kernels::{dot, gemm_nn, gemm_nt, gemm_tn, split_axis, std_normal_cdf, std_normal_pdf};
use super::{Mode, Tensor};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-feature batch mean and biased variance.
pub type BatchMoments = (Vec<f64>, Vec<f64>);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    AddRow {
        x: Var,
        row: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    MulRow {
        x: Var,
        row: Var,
    },
    Div {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: f64,
    },
    Identity {
        x: Var,
    },
    Sqrt {
        x: Var,
    },
    Relu {
        x: Var,
    },
    Gelu {
        x: Var,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    GatherRows {
        x: Var,
        index: Rc<[usize]>,
    },
    WeightedGather {
        x: Var,
        index: Rc<[usize]>,
        weights: Rc<[f64]>,
        k: usize,
    },
    Pool {
        x: Var,
        offsets: Rc<[usize]>,
        kind: PoolKind,
        argmax: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        q_off: Rc<[usize]>,
        kv_off: Rc<[usize]>,
        heads: usize,
        probs: Vec<f64>,
    },
    SumAll {
        x: Var,
    },
    RowSum {
        x: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Chamfer {
        a: Var,
        b: Var,
        a_off: Rc<[usize]>,
        b_off: Rc<[usize]>,
        nn_ab: Vec<usize>,
        nn_ba: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a computation. Inputs always precede the nodes
/// that consume them, so a reverse sweep visits every node once in
/// reverse-topological order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node on the tape.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when `v` does not require gradients or the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn lex_rows(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

fn check_offsets(offsets: &[usize], rows: usize, what: &str) -> Result<()> {
    if offsets.len() < 2 || offsets[0] != 0 || *offsets.last().unwrap() != rows {
        return Err(Error::Precondition(format!(
            "{what}: group offsets must start at 0 and end at {rows}"
        )));
    }
    if offsets.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition(format!("{what}: empty group")));
    }
    Ok(())
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

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    // ---- linear algebra ---------------------------------------------------

    /// `a [.., n, d] · b [d, m] -> [.., n, m]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().is_empty() || bv.shape().len() != 2 || av.cols() != bv.shape()[0] {
            return Err(Error::dim("matmul", av.shape(), bv.shape()));
        }
        let (n, d, m) = (av.rows(), av.cols(), bv.shape()[1]);
        let mut out = vec![0.0; n * m];
        gemm_nn(av.data(), bv.data(), &mut out, n, d, m);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = m;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MatMul { a, b }, rg))
    }

    fn is_row_of(row: &Tensor, x: &Tensor) -> bool {
        let rs = row.shape();
        let is_row = rs.len() == 1 || (rs.len() == 2 && rs[0] == 1);
        is_row && row.len() == x.cols() && x.shape().len() >= 2 && row.shape() != x.shape()
    }

    /// Elementwise sum; a row vector broadcasts against a matrix.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            let out: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
            let rg = self.rg(a) || self.rg(b);
            return Ok(self.push(Tensor::from_parts(av.shape().to_vec(), out), Op::Add { a, b }, rg));
        }
        if Self::is_row_of(bv, av) {
            return self.add_row(a, b);
        }
        if Self::is_row_of(av, bv) {
            return self.add_row(b, a);
        }
        Err(Error::dim("add", av.shape(), bv.shape()))
    }

    fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        let c = xv.cols();
        let mut out = xv.data().to_vec();
        for chunk in out.chunks_mut(c) {
            for (o, r) in chunk.iter_mut().zip(rv.data()) {
                *o += r;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(Tensor::from_parts(xv.shape().to_vec(), out), Op::AddRow { x, row }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dim("sub", av.shape(), bv.shape()));
        }
        let out: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(av.shape().to_vec(), out), Op::Sub { a, b }, rg))
    }

    /// Elementwise product; a row vector broadcasts against a matrix.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            let out: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
            let rg = self.rg(a) || self.rg(b);
            return Ok(self.push(Tensor::from_parts(av.shape().to_vec(), out), Op::Mul { a, b }, rg));
        }
        if Self::is_row_of(bv, av) {
            return self.mul_row(a, b);
        }
        if Self::is_row_of(av, bv) {
            return self.mul_row(b, a);
        }
        Err(Error::dim("mul", av.shape(), bv.shape()))
    }

    fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        let c = xv.cols();
        let mut out = xv.data().to_vec();
        for chunk in out.chunks_mut(c) {
            for (o, r) in chunk.iter_mut().zip(rv.data()) {
                *o *= r;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(Tensor::from_parts(xv.shape().to_vec(), out), Op::MulRow { x, row }, rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dim("div", av.shape(), bv.shape()));
        }
        let out: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| x / y).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("division produced a non-finite value".into()));
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(av.shape().to_vec(), out), Op::Div { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let xv = self.value(x);
        let out: Vec<f64> = xv.data().iter().map(|v| v * c).collect();
        let rg = self.rg(x);
        self.push(Tensor::from_parts(xv.shape().to_vec(), out), Op::Scale { x, c }, rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let xv = self.value(x);
        let out: Vec<f64> = xv.data().iter().map(|v| v + c).collect();
        let rg = self.rg(x);
        self.push(Tensor::from_parts(xv.shape().to_vec(), out), Op::Identity { x }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Identity { x }, rg))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.data().iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Numeric("sqrt of a negative or non-finite value".into()));
        }
        let out: Vec<f64> = xv.data().iter().map(|v| v.sqrt()).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(xv.shape().to_vec(), out), Op::Sqrt { x }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out: Vec<f64> = xv.data().iter().map(|&v| v.max(0.0)).collect();
        let rg = self.rg(x);
        self.push(Tensor::from_parts(xv.shape().to_vec(), out), Op::Relu { x }, rg)
    }

    /// Exact GELU, `x · Φ(x)` with the Gaussian CDF.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out: Vec<f64> = xv.data().iter().map(|&v| v * std_normal_cdf(v)).collect();
        let rg = self.rg(x);
        self.push(Tensor::from_parts(xv.shape().to_vec(), out), Op::Gelu { x }, rg)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.shape().len() {
            return Err(Error::Parameter(format!(
                "softmax axis {axis} out of range for shape {:?}",
                xv.shape()
            )));
        }
        if xv.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("softmax input is not finite".into()));
        }
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        let src = xv.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[at(j)] /= sum;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts(xv.shape().to_vec(), out),
            Op::Softmax { x, axis },
            rg,
        ))
    }

    /// Per-feature normalization over all rows of `x [tokens, features]`.
    ///
    /// In training mode the batch statistics are used and returned as
    /// `(mean, biased variance)` so the caller can update running estimates.
    /// In evaluation mode `running` supplies the statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (&[f64], &[f64]),
        mode: Mode,
        eps: f64,
    ) -> Result<(Var, Option<BatchMoments>)> {
        let xv = self.value(x);
        let f = xv.cols();
        if xv.shape().len() != 2 {
            return Err(Error::dim("batch_norm", xv.shape(), &[0, f]));
        }
        if self.value(gamma).len() != f || self.value(beta).len() != f || running.0.len() != f {
            return Err(Error::dim("batch_norm", xv.shape(), self.value(gamma).shape()));
        }
        let t = xv.rows();
        if t == 0 {
            return Err(Error::Precondition("batch_norm over zero tokens".into()));
        }
        let src = xv.data();
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; f];
                for row in src.chunks(f) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= t as f64);
                let mut var = vec![0.0; f];
                for row in src.chunks(f) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= t as f64);
                (mean, var)
            }
            Mode::Eval => (running.0.to_vec(), running.1.to_vec()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; src.len()];
        let mut out = vec![0.0; src.len()];
        for (r, row) in src.chunks(f).enumerate() {
            for j in 0..f {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat[r * f + j] = h;
                out[r * f + j] = g[j] * h + b[j];
            }
        }
        let train = mode == Mode::Train;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let shape = xv.shape().to_vec();
        let v = self.push(
            Tensor::from_parts(shape, out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            rg,
        );
        Ok((v, train.then_some((mean, var))))
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 - p)`.
    pub fn dropout(&mut self, x: Var, p: f64, mode: Mode, rng: &mut SeededRng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("dropout probability {p} not in [0, 1)")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let xv = self.value(x);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..xv.len())
            .map(|_| if rng.bernoulli(p) { 0.0 } else { keep })
            .collect();
        let out: Vec<f64> = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let rg = self.rg(x);
        let shape = xv.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Dropout { x, mask }, rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Precondition("concat of zero tensors".into()))?;
        if parts.len() == 1 {
            return Ok(*first);
        }
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::Parameter(format!(
                "concat axis {axis} out of range for {base:?}"
            )));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let pv = self.value(p);
                let chunk = pv.shape()[axis] * inner;
                out.extend_from_slice(&pv.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Rows of `x` selected (with repetition) by `index`.
    pub fn gather_rows(&mut self, x: Var, index: Rc<[usize]>) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        if xv.shape().len() != 2 {
            return Err(Error::dim("gather_rows", xv.shape(), &[r, c]));
        }
        if index.is_empty() {
            return Err(Error::Precondition("gather_rows with an empty index".into()));
        }
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            if i >= r {
                return Err(Error::Precondition(format!("row index {i} out of range for {r} rows")));
            }
            out.extend_from_slice(xv.row(i));
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts(vec![index.len(), c], out),
            Op::GatherRows { x, index },
            rg,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let index: Rc<[usize]> = (start..end).collect();
        self.gather_rows(x, index)
    }

    /// `out[m] = Σ_j weights[m·k + j] · x[index[m·k + j]]`
    pub fn weighted_gather(&mut self, x: Var, index: Rc<[usize]>, weights: Rc<[f64]>, k: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        if k == 0 || index.len() != weights.len() || !index.len().is_multiple_of(k) || index.is_empty() {
            return Err(Error::Precondition("weighted_gather index/weight layout".into()));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return Err(Error::Precondition(format!(
                "row index {bad} out of range for {r} rows"
            )));
        }
        let m = index.len() / k;
        let mut out = vec![0.0; m * c];
        for (row, o) in out.chunks_mut(c).enumerate() {
            for j in row * k..(row + 1) * k {
                let w = weights[j];
                for (ov, xv) in o.iter_mut().zip(xv.row(index[j])) {
                    *ov += w * xv;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts(vec![m, c], out),
            Op::WeightedGather { x, index, weights, k },
            rg,
        ))
    }

    /// Pools contiguous row groups of `x [tokens, features]`; group `g` spans
    /// rows `offsets[g]..offsets[g + 1]`. Max pooling breaks ties toward the
    /// lowest row.
    pub fn pool_groups(&mut self, x: Var, offsets: Rc<[usize]>, kind: PoolKind) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        if xv.shape().len() != 2 {
            return Err(Error::dim("pool", xv.shape(), &[r, c]));
        }
        check_offsets(&offsets, r, "pool")?;
        let groups = offsets.len() - 1;
        let mut out = vec![0.0; groups * c];
        let mut argmax = Vec::new();
        match kind {
            PoolKind::Max => {
                argmax = vec![0usize; groups * c];
                for g in 0..groups {
                    for j in 0..c {
                        let mut best = offsets[g];
                        let mut val = xv.data()[best * c + j];
                        for t in offsets[g] + 1..offsets[g + 1] {
                            let v = xv.data()[t * c + j];
                            if v > val {
                                val = v;
                                best = t;
                            }
                        }
                        out[g * c + j] = val;
                        argmax[g * c + j] = best;
                    }
                }
            }
            PoolKind::Avg => {
                let mut order = Vec::new();
                for g in 0..groups {
                    let n = (offsets[g + 1] - offsets[g]) as f64;
                    let o = &mut out[g * c..(g + 1) * c];
                    // Summing rows in sorted order makes the result independent
                    // of the order of rows within the group.
                    order.clear();
                    order.extend(offsets[g]..offsets[g + 1]);
                    order.sort_by(|&a, &b| lex_rows(xv.row(a), xv.row(b)));
                    for &t in &order {
                        for (ov, v) in o.iter_mut().zip(xv.row(t)) {
                            *ov += v;
                        }
                    }
                    o.iter_mut().for_each(|v| *v /= n);
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts(vec![groups, c], out),
            Op::Pool {
                x,
                offsets,
                kind,
                argmax,
            },
            rg,
        ))
    }

    /// Pools every row of `x [tokens, features]` into one `[features]` vector.
    pub fn pool(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 2 {
            return Err(Error::dim("pool", xv.shape(), &[0, xv.cols()]));
        }
        let rows = xv.rows();
        let c = xv.cols();
        let offsets: Rc<[usize]> = Rc::from(vec![0, rows]);
        let pooled = self.pool_groups(x, offsets, kind)?;
        self.reshape(pooled, vec![c])
    }

    /// Grouped multi-head scaled dot-product attention.
    ///
    /// Query group `g` spans rows `q_off[g]..q_off[g+1]` of `q` and attends to
    /// rows `kv_off[g]..kv_off[g+1]` of `k` and `v`. Head `h` uses column
    /// block `h` of each projection; logits are divided by `√(query width per
    /// head)`. Output heads are concatenated along the feature axis.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        q_off: Rc<[usize]>,
        kv_off: Rc<[usize]>,
        heads: usize,
    ) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        if qv.shape().len() != 2 || kv.shape().len() != 2 || vv.shape().len() != 2 {
            return Err(Error::dim("attention", qv.shape(), kv.shape()));
        }
        if heads == 0 {
            return Err(Error::Parameter("attention needs at least one head".into()));
        }
        let (dq, dv) = (qv.cols(), vv.cols());
        if kv.cols() != dq || dq % heads != 0 || dv % heads != 0 {
            return Err(Error::dim("attention", qv.shape(), kv.shape()));
        }
        if kv.rows() != vv.rows() {
            return Err(Error::dim("attention", kv.shape(), vv.shape()));
        }
        check_offsets(&q_off, qv.rows(), "attention queries")?;
        check_offsets(&kv_off, kv.rows(), "attention keys")?;
        if q_off.len() != kv_off.len() {
            return Err(Error::Precondition(
                "attention: query and key group counts differ".into(),
            ));
        }
        let (aq, av) = (dq / heads, dv / heads);
        let scale = 1.0 / (aq as f64).sqrt();
        let groups = q_off.len() - 1;
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        let mut out = vec![0.0; qv.rows() * dv];
        let mut probs = Vec::new();
        let mut logits = Vec::new();
        let mut order = Vec::new();
        for g in 0..groups {
            let (q0, q1, k0, k1) = (q_off[g], q_off[g + 1], kv_off[g], kv_off[g + 1]);
            let nk = k1 - k0;
            for h in 0..heads {
                let krow = |j: usize| &kd[j * dq + h * aq..j * dq + (h + 1) * aq];
                let vrow = |j: usize| &vd[j * dv + h * av..j * dv + (h + 1) * av];
                // Accumulating over keys in content order makes the output
                // bit-identical under any joint reordering of keys and values.
                order.clear();
                order.extend(k0..k1);
                order.sort_by(|&a, &b| lex_rows(krow(a), krow(b)).then_with(|| lex_rows(vrow(a), vrow(b))));
                for i in q0..q1 {
                    let qrow = &qd[i * dq + h * aq..i * dq + (h + 1) * aq];
                    logits.clear();
                    let mut max = f64::NEG_INFINITY;
                    for j in k0..k1 {
                        let l = dot(qrow, krow(j)) * scale;
                        max = max.max(l);
                        logits.push(l);
                    }
                    let mut sum = 0.0;
                    for &j in &order {
                        let l = &mut logits[j - k0];
                        *l = (*l - max).exp();
                        sum += *l;
                    }
                    let orow = &mut out[i * dv + h * av..i * dv + (h + 1) * av];
                    for &j in &order {
                        let p = logits[j - k0] / sum;
                        logits[j - k0] = p;
                        for (o, x) in orow.iter_mut().zip(vrow(j)) {
                            *o += p * x;
                        }
                    }
                    debug_assert_eq!(logits.len(), nk);
                    probs.extend_from_slice(&logits);
                }
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        let shape = vec![qv.rows(), dv];
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Attention {
                q,
                k,
                v,
                q_off,
                kv_off,
                heads,
                probs,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumAll { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sum over the last axis: `[t, f] -> [t, 1]`.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let out: Vec<f64> = xv.data().chunks(c).map(|r| r.iter().sum()).collect();
        let rg = self.rg(x);
        let n = out.len();
        self.push(Tensor::from_parts(vec![n, 1], out), Op::RowSum { x }, rg)
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (r, c) = (lv.rows(), lv.cols());
        if labels.len() != r {
            return Err(Error::dim("cross_entropy", lv.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Parameter(format!("label {bad} out of range for {c} classes")));
        }
        let mut probs = vec![0.0; r * c];
        let mut loss = 0.0;
        for (i, row) in lv.data().chunks(c).enumerate() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
            loss += lse - row[labels[i]];
        }
        if !loss.is_finite() {
            return Err(Error::Numeric("cross entropy is not finite".into()));
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss / r as f64),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Per-set chamfer distance between paired point sets.
    ///
    /// Set `s` of `a` spans rows `a_off[s]..a_off[s+1]` (likewise for `b`);
    /// the result has one entry per set: mean squared nearest distance from
    /// `a` to `b` plus the same from `b` to `a`. Ties pick the lowest row.
    pub fn chamfer(&mut self, a: Var, b: Var, a_off: Rc<[usize]>, b_off: Rc<[usize]>) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != 3 || bv.cols() != 3 || av.shape().len() != 2 || bv.shape().len() != 2 {
            return Err(Error::dim("chamfer", av.shape(), bv.shape()));
        }
        check_offsets(&a_off, av.rows(), "chamfer")?;
        check_offsets(&b_off, bv.rows(), "chamfer")?;
        if a_off.len() != b_off.len() {
            return Err(Error::Precondition("chamfer: set counts differ".into()));
        }
        let sets = a_off.len() - 1;
        let (ad, bd) = (av.data(), bv.data());
        let mut nn_ab = vec![0; av.rows()];
        let mut nn_ba = vec![0; bv.rows()];
        let mut out = vec![0.0; sets];
        for s in 0..sets {
            let forward = nearest_pass(ad, bd, a_off[s]..a_off[s + 1], b_off[s]..b_off[s + 1], &mut nn_ab);
            let backward = nearest_pass(bd, ad, b_off[s]..b_off[s + 1], a_off[s]..a_off[s + 1], &mut nn_ba);
            out[s] = forward + backward;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::from_parts(vec![sets], out),
            Op::Chamfer {
                a,
                b,
                a_off,
                b_off,
                nn_ab,
                nn_ba,
            },
            rg,
        ))
    }

    // ---- reverse sweep ----------------------------------------------------

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        if !self.rg(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, d, m) = (av.rows(), av.cols(), bv.shape()[1]);
                if let Some(ga) = self.slot(grads, *a) {
                    gemm_nt(g, bv.data(), ga, n, d, m);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm_tn(av.data(), g, gb, n, d, m);
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(gv) = self.slot(grads, v) {
                        add_into(gv, g);
                    }
                }
            }
            Op::AddRow { x, row } => {
                if let Some(gx) = self.slot(grads, *x) {
                    add_into(gx, g);
                }
                let c = self.value(*x).cols();
                if let Some(gr) = self.slot(grads, *row) {
                    for chunk in g.chunks(c) {
                        add_into(gr, chunk);
                    }
                }
            }
            Op::Sub { a, b } => {
                if let Some(ga) = self.slot(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for (o, v) in gb.iter_mut().zip(g) {
                        *o -= v;
                    }
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.slot(grads, *a) {
                    for ((o, gv), y) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gv * y;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((o, gv), x) in gb.iter_mut().zip(g).zip(av) {
                        *o += gv * x;
                    }
                }
            }
            Op::MulRow { x, row } => {
                let xv = self.value(*x);
                let rv = self.value(*row).data();
                let c = xv.cols();
                if let Some(gx) = self.slot(grads, *x) {
                    for (gchunk, ochunk) in g.chunks(c).zip(gx.chunks_mut(c)) {
                        for ((o, gv), r) in ochunk.iter_mut().zip(gchunk).zip(rv) {
                            *o += gv * r;
                        }
                    }
                }
                if let Some(gr) = self.slot(grads, *row) {
                    for (gchunk, xchunk) in g.chunks(c).zip(xv.data().chunks(c)) {
                        for ((o, gv), xval) in gr.iter_mut().zip(gchunk).zip(xchunk) {
                            *o += gv * xval;
                        }
                    }
                }
            }
            Op::Div { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.slot(grads, *a) {
                    for ((o, gv), y) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gv / y;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for (((o, gv), x), y) in gb.iter_mut().zip(g).zip(av).zip(bv) {
                        *o -= gv * x / (y * y);
                    }
                }
            }
            Op::Scale { x, c } => {
                if let Some(gx) = self.slot(grads, *x) {
                    for (o, gv) in gx.iter_mut().zip(g) {
                        *o += c * gv;
                    }
                }
            }
            Op::Identity { x } => {
                if let Some(gx) = self.slot(grads, *x) {
                    add_into(gx, g);
                }
            }
            Op::Sqrt { x } => {
                let y = node.value.data();
                if let Some(gx) = self.slot(grads, *x) {
                    for ((o, gv), yv) in gx.iter_mut().zip(g).zip(y) {
                        *o += gv / (2.0 * yv);
                    }
                }
            }
            Op::Relu { x } => {
                let xv = self.value(*x).data();
                if let Some(gx) = self.slot(grads, *x) {
                    for ((o, gv), v) in gx.iter_mut().zip(g).zip(xv) {
                        if *v > 0.0 {
                            *o += gv;
                        }
                    }
                }
            }
            Op::Gelu { x } => {
                let xv = self.value(*x).data();
                if let Some(gx) = self.slot(grads, *x) {
                    for ((o, gv), &v) in gx.iter_mut().zip(g).zip(xv) {
                        *o += gv * (std_normal_cdf(v) + v * std_normal_pdf(v));
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                if let Some(gx) = self.slot(grads, *x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * len * inner + j * inner + i;
                            let s: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..len {
                                gx[at(j)] += y[at(j)] * (g[at(j)] - s);
                            }
                        }
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let f = inv_std.len();
                let t = xhat.len() / f;
                let gam = self.value(*gamma).data();
                if let Some(gg) = self.slot(grads, *gamma) {
                    for (gr, hr) in g.chunks(f).zip(xhat.chunks(f)) {
                        for j in 0..f {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *beta) {
                    for gr in g.chunks(f) {
                        add_into(gb, gr);
                    }
                }
                if let Some(gx) = self.slot(grads, *x) {
                    if *train {
                        let mut sum_d = vec![0.0; f];
                        let mut sum_dh = vec![0.0; f];
                        for (gr, hr) in g.chunks(f).zip(xhat.chunks(f)) {
                            for j in 0..f {
                                let d = gr[j] * gam[j];
                                sum_d[j] += d;
                                sum_dh[j] += d * hr[j];
                            }
                        }
                        let tf = t as f64;
                        for r in 0..t {
                            for j in 0..f {
                                let d = g[r * f + j] * gam[j];
                                gx[r * f + j] += inv_std[j] / tf * (tf * d - sum_d[j] - xhat[r * f + j] * sum_dh[j]);
                            }
                        }
                    } else {
                        for r in 0..t {
                            for j in 0..f {
                                gx[r * f + j] += g[r * f + j] * gam[j] * inv_std[j];
                            }
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = self.slot(grads, *x) {
                    for ((o, gv), m) in gx.iter_mut().zip(g).zip(mask) {
                        *o += gv * m;
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut start = 0;
                for &p in parts {
                    let width = self.value(p).shape()[*axis];
                    if let Some(gp) = self.slot(grads, p) {
                        for o in 0..outer {
                            let src = &g[(o * total + start) * inner..(o * total + start + width) * inner];
                            add_into(&mut gp[o * width * inner..(o + 1) * width * inner], src);
                        }
                    }
                    start += width;
                }
            }
            Op::GatherRows { x, index } => {
                let c = node.value.cols();
                if let Some(gx) = self.slot(grads, *x) {
                    for (r, &i) in index.iter().enumerate() {
                        add_into(&mut gx[i * c..(i + 1) * c], &g[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::WeightedGather { x, index, weights, k } => {
                let c = node.value.cols();
                if let Some(gx) = self.slot(grads, *x) {
                    for (j, (&i, &w)) in index.iter().zip(weights.iter()).enumerate() {
                        let row = j / k;
                        let src = &g[row * c..(row + 1) * c];
                        for (o, gv) in gx[i * c..(i + 1) * c].iter_mut().zip(src) {
                            *o += w * gv;
                        }
                    }
                }
            }
            Op::Pool {
                x,
                offsets,
                kind,
                argmax,
            } => {
                let c = node.value.cols();
                if let Some(gx) = self.slot(grads, *x) {
                    match kind {
                        PoolKind::Max => {
                            for (slot, &t) in argmax.iter().enumerate() {
                                gx[t * c + slot % c] += g[slot];
                            }
                        }
                        PoolKind::Avg => {
                            for grp in 0..offsets.len() - 1 {
                                let n = (offsets[grp + 1] - offsets[grp]) as f64;
                                let src = &g[grp * c..(grp + 1) * c];
                                for t in offsets[grp]..offsets[grp + 1] {
                                    for (o, gv) in gx[t * c..(t + 1) * c].iter_mut().zip(src) {
                                        *o += gv / n;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                q_off,
                kv_off,
                heads,
                probs,
            } => self.attention_backward(g, grads, (*q, *k, *v), q_off, kv_off, *heads, probs),
            Op::SumAll { x } => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::RowSum { x } => {
                let c = self.value(*x).cols();
                if let Some(gx) = self.slot(grads, *x) {
                    for (chunk, gv) in gx.chunks_mut(c).zip(g) {
                        chunk.iter_mut().for_each(|o| *o += gv);
                    }
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let c = self.value(*logits).cols();
                let scale = g[0] / labels.len() as f64;
                if let Some(gl) = self.slot(grads, *logits) {
                    for (i, &label) in labels.iter().enumerate() {
                        for j in 0..c {
                            let target = if j == label { 1.0 } else { 0.0 };
                            gl[i * c + j] += scale * (probs[i * c + j] - target);
                        }
                    }
                }
            }
            Op::Chamfer {
                a,
                b,
                a_off,
                b_off,
                nn_ab,
                nn_ba,
            } => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let mut ga = vec![0.0; ad.len()];
                let mut gb = vec![0.0; bd.len()];
                for s in 0..g.len() {
                    let na = (a_off[s + 1] - a_off[s]) as f64;
                    let nb = (b_off[s + 1] - b_off[s]) as f64;
                    for i in a_off[s]..a_off[s + 1] {
                        let j = nn_ab[i];
                        for c in 0..3 {
                            let d = 2.0 * g[s] * (ad[i * 3 + c] - bd[j * 3 + c]) / na;
                            ga[i * 3 + c] += d;
                            gb[j * 3 + c] -= d;
                        }
                    }
                    for j in b_off[s]..b_off[s + 1] {
                        let i = nn_ba[j];
                        for c in 0..3 {
                            let d = 2.0 * g[s] * (bd[j * 3 + c] - ad[i * 3 + c]) / nb;
                            gb[j * 3 + c] += d;
                            ga[i * 3 + c] -= d;
                        }
                    }
                }
                if let Some(slot) = self.slot(grads, *a) {
                    add_into(slot, &ga);
                }
                if let Some(slot) = self.slot(grads, *b) {
                    add_into(slot, &gb);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        (q, k, v): (Var, Var, Var),
        q_off: &[usize],
        kv_off: &[usize],
        heads: usize,
        probs: &[f64],
    ) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (dq, dv) = (qv.cols(), vv.cols());
        let (aq, av) = (dq / heads, dv / heads);
        let scale = 1.0 / (aq as f64).sqrt();
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        let mut gq = vec![0.0; qd.len()];
        let mut gk = vec![0.0; kd.len()];
        let mut gv = vec![0.0; vd.len()];
        let mut dlogit = Vec::new();
        let mut p_at = 0;
        for grp in 0..q_off.len() - 1 {
            let (q0, q1, k0, k1) = (q_off[grp], q_off[grp + 1], kv_off[grp], kv_off[grp + 1]);
            let nk = k1 - k0;
            for h in 0..heads {
                for i in q0..q1 {
                    let p = &probs[p_at..p_at + nk];
                    p_at += nk;
                    let grow = &g[i * dv + h * av..i * dv + (h + 1) * av];
                    dlogit.clear();
                    let mut weighted = 0.0;
                    for (jj, &pj) in p.iter().enumerate() {
                        let j = k0 + jj;
                        let dp = dot(grow, &vd[j * dv + h * av..j * dv + (h + 1) * av]);
                        weighted += pj * dp;
                        dlogit.push(dp);
                        for (o, gvv) in gv[j * dv + h * av..j * dv + (h + 1) * av].iter_mut().zip(grow) {
                            *o += pj * gvv;
                        }
                    }
                    let qrow = &qd[i * dq + h * aq..i * dq + (h + 1) * aq];
                    for (jj, &pj) in p.iter().enumerate() {
                        let j = k0 + jj;
                        let ds = pj * (dlogit[jj] - weighted) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let krow = &kd[j * dq + h * aq..j * dq + (h + 1) * aq];
                        for (o, kvv) in gq[i * dq + h * aq..i * dq + (h + 1) * aq].iter_mut().zip(krow) {
                            *o += ds * kvv;
                        }
                        for (o, qvv) in gk[j * dq + h * aq..j * dq + (h + 1) * aq].iter_mut().zip(qrow) {
                            *o += ds * qvv;
                        }
                    }
                }
            }
        }
        for (var, local) in [(q, gq), (k, gk), (v, gv)] {
            if let Some(slot) = self.slot(grads, var) {
                add_into(slot, &local);
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Mean over `from` rows of the squared distance to the nearest `to` row;
/// records the nearest row per source row in `nn`.
fn nearest_pass(
    from: &[f64],
    to: &[f64],
    from_rows: std::ops::Range<usize>,
    to_rows: std::ops::Range<usize>,
    nn: &mut [usize],
) -> f64 {
    let n = from_rows.len() as f64;
    let mut mins = Vec::with_capacity(from_rows.len());
    for i in from_rows {
        let p = &from[i * 3..i * 3 + 3];
        let mut best = f64::INFINITY;
        let mut arg = to_rows.start;
        for j in to_rows.clone() {
            let q = &to[j * 3..j * 3 + 3];
            let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
            if d < best {
                best = d;
                arg = j;
            }
        }
        nn[i] = arg;
        mins.push(best);
    }
    // Sorted summation makes the value independent of point order.
    mins.sort_by(f64::total_cmp);
    mins.iter().sum::<f64>() / n
}
