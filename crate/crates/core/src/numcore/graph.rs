//! Taped reverse-mode automatic differentiation.
//!
//! Every primitive records its output value and inputs on a [`Graph`].
//! [`Graph::gradients`] walks the tape backwards and records the
//! vector-Jacobian products as new nodes on the same tape, so gradients are
//! themselves differentiable. First-order callers simply read the values (or
//! [`Graph::detach`] them); second-order callers keep differentiating.

use std::sync::Arc;

use super::tensor::Tensor;
use crate::error::{EmoError, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Const,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    /// `[n, m] + [m]`
    AddRowBias(Var, Var),
    /// `[n, m] -> [m]`
    SumRows(Var),
    /// `[m] -> [n, m]`
    BroadcastRows(Var),
    /// `[n, m] -> [n]`
    RowSum(Var),
    /// `[n] -> [n, m]`
    BroadcastCols(Var),
    Sum(Var),
    Expand(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Powf(Var, f64),
    Softmax(Var),
    LogSoftmax(Var),
    /// `[n, m] -> [n]`, one column per row.
    Pick(Var, Arc<[usize]>),
    /// Adjoint of `Pick`: `[n] -> [n, m]`.
    Unpick(Var, Arc<[usize]>),
    /// `[n, m] -> [k, m]`
    SelectRows(Var, Arc<[usize]>),
    /// Adjoint of `SelectRows`: `[k, m] -> [n, m]`, accumulating duplicates.
    ScatterRows(Var, Arc<[usize]>),
    Reshape(Var),
    ConcatRows(Arc<[Var]>),
    SliceRows(Var, usize),
    PadRows(Var, usize),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// A recording of primitive operations in topological order.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(msg: String) -> EmoError {
    EmoError::Shape(msg)
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Const)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Copy of `v`'s value with no gradient path back to `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn dims2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(shape_err(format!("{what}: expected a matrix, got {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.value(a).matmul(self.value(b))?;
        Ok(self.push(t, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transpose()?;
        Ok(self.push(t, Op::Transpose(a)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let t = self.value(a).add(self.value(b))?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let t = self.value(a).sub(self.value(b))?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let t = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).scale(c);
        self.push(t, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|v| v + c);
        self.push(t, Op::AddScalar(a))
    }

    pub fn add_row_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, m) = self.dims2(a, "add_row_bias")?;
        if self.shape(b) != [m] {
            return Err(shape_err(format!(
                "add_row_bias: bias {:?} does not match {m} columns",
                self.shape(b)
            )));
        }
        let bias = self.value(b).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for i in 0..n {
            for (d, bv) in data[i * m..(i + 1) * m].iter_mut().zip(&bias) {
                *d += bv;
            }
        }
        Ok(self.push(Tensor::new(vec![n, m], data)?, Op::AddRowBias(a, b)))
    }

    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.dims2(a, "sum_rows")?;
        let src = self.value(a).data();
        let mut out = vec![0.0; m];
        for i in 0..n {
            for (o, s) in out.iter_mut().zip(&src[i * m..(i + 1) * m]) {
                *o += s;
            }
        }
        Ok(self.push(Tensor::vector(out), Op::SumRows(a)))
    }

    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let m = match self.shape(a) {
            [m] => *m,
            s => return Err(shape_err(format!("broadcast_rows: expected a vector, got {s:?}"))),
        };
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(n * m);
        for _ in 0..n {
            data.extend_from_slice(src);
        }
        Ok(self.push(Tensor::new(vec![n, m], data)?, Op::BroadcastRows(a)))
    }

    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.dims2(a, "row_sum")?;
        let src = self.value(a).data();
        let out = (0..n).map(|i| src[i * m..(i + 1) * m].iter().sum()).collect();
        Ok(self.push(Tensor::vector(out), Op::RowSum(a)))
    }

    pub fn broadcast_cols(&mut self, a: Var, m: usize) -> Result<Var> {
        let n = match self.shape(a) {
            [n] => *n,
            s => return Err(shape_err(format!("broadcast_cols: expected a vector, got {s:?}"))),
        };
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(n * m);
        for &v in src {
            data.extend(std::iter::repeat_n(v, m));
        }
        Ok(self.push(Tensor::new(vec![n, m], data)?, Op::BroadcastCols(a)))
    }

    /// Sum of all entries, as a rank-0 scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Broadcast a single-element tensor to `shape`.
    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if self.value(a).len() != 1 {
            return Err(shape_err(format!("expand: source {:?} is not a scalar", self.shape(a))));
        }
        let v = self.value(a).item();
        Ok(self.push(Tensor::filled(shape, v), Op::Expand(a)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|v| v.max(0.0));
        self.push(t, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::exp);
        self.push(t, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::ln);
        self.push(t, Op::Log(a))
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let t = self.value(a).map(|v| v.powf(p));
        self.push(t, Op::Powf(a, p))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.dims2(a, "softmax")?;
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(m.max(1)).take(n) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        Ok(self.push(Tensor::new(vec![n, m], data)?, Op::Softmax(a)))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.dims2(a, "log_softmax")?;
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(m.max(1)).take(n) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Ok(self.push(Tensor::new(vec![n, m], data)?, Op::LogSoftmax(a)))
    }

    /// Gathers `a[i, idx[i]]` for every row.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (n, m) = self.dims2(a, "pick")?;
        if idx.len() != n || idx.iter().any(|&j| j >= m) {
            return Err(shape_err(format!("pick: indices {idx:?} invalid for [{n}, {m}]")));
        }
        let src = self.value(a).data();
        let out = idx.iter().enumerate().map(|(i, &j)| src[i * m + j]).collect();
        Ok(self.push(Tensor::vector(out), Op::Pick(a, idx.into())))
    }

    fn unpick(&mut self, a: Var, idx: Arc<[usize]>, m: usize) -> Result<Var> {
        let n = idx.len();
        if self.shape(a) != [n] {
            return Err(shape_err(format!("unpick: expected [{n}], got {:?}", self.shape(a))));
        }
        let src = self.value(a).data();
        let mut data = vec![0.0; n * m];
        for (i, &j) in idx.iter().enumerate() {
            data[i * m + j] = src[i];
        }
        Ok(self.push(Tensor::new(vec![n, m], data)?, Op::Unpick(a, idx)))
    }

    /// Rows `idx` of a matrix, in the given order.
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (n, m) = self.dims2(a, "select_rows")?;
        if idx.iter().any(|&i| i >= n) {
            return Err(shape_err(format!("select_rows: indices {idx:?} out of range for {n} rows")));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(idx.len() * m);
        for &i in idx {
            data.extend_from_slice(&src[i * m..(i + 1) * m]);
        }
        Ok(self.push(Tensor::new(vec![idx.len(), m], data)?, Op::SelectRows(a, idx.into())))
    }

    fn scatter_rows(&mut self, a: Var, idx: Arc<[usize]>, n: usize) -> Result<Var> {
        let (k, m) = self.dims2(a, "scatter_rows")?;
        if k != idx.len() {
            return Err(shape_err(format!("scatter_rows: {k} rows for {} indices", idx.len())));
        }
        let src = self.value(a).data();
        let mut data = vec![0.0; n * m];
        for (r, &i) in idx.iter().enumerate() {
            for (d, s) in data[i * m..(i + 1) * m].iter_mut().zip(&src[r * m..(r + 1) * m]) {
                *d += s;
            }
        }
        Ok(self.push(Tensor::new(vec![n, m], data)?, Op::ScatterRows(a, idx)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(EmoError::Empty("concat_rows needs at least one part".into()));
        };
        let (_, m) = self.dims2(first, "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_rows")?;
            if c != m {
                return Err(shape_err(format!("concat_rows: {c} columns, expected {m}")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::new(vec![rows, m], data)?, Op::ConcatRows(parts.into())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (n, m) = self.dims2(a, "slice_rows")?;
        if start + len > n {
            return Err(shape_err(format!("slice_rows: {start}+{len} exceeds {n} rows")));
        }
        let data = self.value(a).data()[start * m..(start + len) * m].to_vec();
        Ok(self.push(Tensor::new(vec![len, m], data)?, Op::SliceRows(a, start)))
    }

    fn pad_rows(&mut self, a: Var, start: usize, total: usize) -> Result<Var> {
        let (r, m) = self.dims2(a, "pad_rows")?;
        if start + r > total {
            return Err(shape_err(format!("pad_rows: {start}+{r} exceeds {total} rows")));
        }
        let mut data = vec![0.0; total * m];
        data[start * m..(start + r) * m].copy_from_slice(self.value(a).data());
        Ok(self.push(Tensor::new(vec![total, m], data)?, Op::PadRows(a, start)))
    }

    // Composites.

    /// `x · w + b` for `x: [n, in]`, `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row_bias(xw, b)
    }

    /// Per-row normalisation to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (_, m) = self.dims2(x, "layer_norm")?;
        let inv_m = 1.0 / m as f64;
        let s = self.row_sum(x)?;
        let mean = self.scale(s, inv_m);
        let mean_b = self.broadcast_cols(mean, m)?;
        let centered = self.sub(x, mean_b)?;
        let sq = self.mul(centered, centered)?;
        let ss = self.row_sum(sq)?;
        let var = self.scale(ss, inv_m);
        let var_eps = self.add_scalar(var, eps);
        let inv_std = self.powf(var_eps, -0.5);
        let inv_b = self.broadcast_cols(inv_std, m)?;
        self.mul(centered, inv_b)
    }

    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.sub(pred, target)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lsm = self.log_softmax(logits)?;
        let picked = self.pick(lsm, labels)?;
        let m = self.mean(picked);
        Ok(self.neg(m))
    }

    /// Reverse-mode gradients of the scalar `loss` with respect to `wrt`.
    ///
    /// The adjoints are recorded as new nodes, so the returned vars can be
    /// differentiated again. Inputs with no path to `loss` get zero tensors.
    pub fn gradients(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if self.value(loss).len() != 1 {
            return Err(shape_err(format!(
                "gradients: loss must be scalar, got {:?}",
                self.shape(loss)
            )));
        }
        let end = loss.0 + 1;
        let mut depends = vec![false; end];
        for w in wrt {
            if w.0 < end {
                depends[w.0] = true;
            }
        }
        for i in 0..end {
            if depends[i] {
                continue;
            }
            let mut hit = false;
            self.for_each_input(i, |j| hit |= depends[j.0]);
            depends[i] = hit;
        }

        let mut adj: Vec<Option<Var>> = vec![None; end];
        if depends[loss.0] {
            let shape = self.shape(loss).to_vec();
            adj[loss.0] = Some(self.constant(Tensor::filled(&shape, 1.0)));
        }
        for i in (0..end).rev() {
            let Some(g) = adj[i] else { continue };
            if !depends[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let y = Var(i);
            let mut contribs: Vec<(Var, Var)> = Vec::with_capacity(2);
            match op {
                Op::Leaf | Op::Const => {}
                Op::MatMul(a, b) => {
                    if depends[a.0] {
                        let bt = self.transpose(b)?;
                        contribs.push((a, self.matmul(g, bt)?));
                    }
                    if depends[b.0] {
                        let at = self.transpose(a)?;
                        contribs.push((b, self.matmul(at, g)?));
                    }
                }
                Op::Transpose(a) => contribs.push((a, self.transpose(g)?)),
                Op::Add(a, b) => {
                    contribs.push((a, g));
                    contribs.push((b, g));
                }
                Op::Sub(a, b) => {
                    contribs.push((a, g));
                    if depends[b.0] {
                        contribs.push((b, self.neg(g)));
                    }
                }
                Op::Mul(a, b) => {
                    if depends[a.0] {
                        contribs.push((a, self.mul(g, b)?));
                    }
                    if depends[b.0] {
                        contribs.push((b, self.mul(g, a)?));
                    }
                }
                Op::Scale(a, c) => contribs.push((a, self.scale(g, c))),
                Op::AddScalar(a) => contribs.push((a, g)),
                Op::AddRowBias(a, b) => {
                    contribs.push((a, g));
                    if depends[b.0] {
                        contribs.push((b, self.sum_rows(g)?));
                    }
                }
                Op::SumRows(a) => {
                    let n = self.shape(a)[0];
                    contribs.push((a, self.broadcast_rows(g, n)?));
                }
                Op::BroadcastRows(a) => contribs.push((a, self.sum_rows(g)?)),
                Op::RowSum(a) => {
                    let m = self.shape(a)[1];
                    contribs.push((a, self.broadcast_cols(g, m)?));
                }
                Op::BroadcastCols(a) => contribs.push((a, self.row_sum(g)?)),
                Op::Sum(a) => {
                    let shape = self.shape(a).to_vec();
                    contribs.push((a, self.expand(g, &shape)?));
                }
                Op::Expand(a) => {
                    let s = self.sum(g);
                    let shape = self.shape(a).to_vec();
                    let s = if shape.is_empty() { s } else { self.reshape(s, &shape)? };
                    contribs.push((a, s));
                }
                Op::Tanh(a) => {
                    let yy = self.mul(y, y)?;
                    let gyy = self.mul(g, yy)?;
                    contribs.push((a, self.sub(g, gyy)?));
                }
                Op::Relu(a) => {
                    let mask = self.value(a).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    let mask = self.constant(mask);
                    contribs.push((a, self.mul(g, mask)?));
                }
                Op::Exp(a) => contribs.push((a, self.mul(g, y)?)),
                Op::Log(a) => {
                    let inv = self.powf(a, -1.0);
                    contribs.push((a, self.mul(g, inv)?));
                }
                Op::Powf(a, p) => {
                    let d = self.powf(a, p - 1.0);
                    let gd = self.mul(g, d)?;
                    contribs.push((a, self.scale(gd, p)));
                }
                Op::Softmax(a) => {
                    let m = self.shape(a)[1];
                    let gy = self.mul(g, y)?;
                    let s = self.row_sum(gy)?;
                    let sb = self.broadcast_cols(s, m)?;
                    let diff = self.sub(g, sb)?;
                    contribs.push((a, self.mul(y, diff)?));
                }
                Op::LogSoftmax(a) => {
                    let m = self.shape(a)[1];
                    let sm = self.exp(y);
                    let s = self.row_sum(g)?;
                    let sb = self.broadcast_cols(s, m)?;
                    let t = self.mul(sm, sb)?;
                    contribs.push((a, self.sub(g, t)?));
                }
                Op::Pick(a, idx) => {
                    let m = self.shape(a)[1];
                    contribs.push((a, self.unpick(g, idx, m)?));
                }
                Op::Unpick(a, idx) => contribs.push((a, self.pick(g, &idx)?)),
                Op::SelectRows(a, idx) => {
                    let n = self.shape(a)[0];
                    contribs.push((a, self.scatter_rows(g, idx, n)?));
                }
                Op::ScatterRows(a, idx) => contribs.push((a, self.select_rows(g, &idx)?)),
                Op::Reshape(a) => {
                    let shape = self.shape(a).to_vec();
                    contribs.push((a, self.reshape(g, &shape)?));
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts.iter() {
                        let r = self.shape(p)[0];
                        if depends[p.0] {
                            contribs.push((p, self.slice_rows(g, start, r)?));
                        }
                        start += r;
                    }
                }
                Op::SliceRows(a, start) => {
                    let total = self.shape(a)[0];
                    contribs.push((a, self.pad_rows(g, start, total)?));
                }
                Op::PadRows(a, start) => {
                    let r = self.shape(a)[0];
                    contribs.push((a, self.slice_rows(g, start, r)?));
                }
            }
            for (target, c) in contribs {
                if !depends[target.0] {
                    continue;
                }
                adj[target.0] = Some(match adj[target.0] {
                    None => c,
                    Some(prev) => self.add(prev, c)?,
                });
            }
        }

        wrt.iter()
            .map(|&w| match adj.get(w.0).copied().flatten() {
                Some(v) => Ok(v),
                None => {
                    let shape = self.shape(w).to_vec();
                    Ok(self.constant(Tensor::zeros(&shape)))
                }
            })
            .collect()
    }

    fn for_each_input(&self, i: usize, mut f: impl FnMut(Var)) {
        match &self.nodes[i].op {
            Op::Leaf | Op::Const => {}
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRowBias(a, b) => {
                f(*a);
                f(*b);
            }
            Op::ConcatRows(parts) => parts.iter().for_each(|&p| f(p)),
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::SumRows(a)
            | Op::BroadcastRows(a)
            | Op::RowSum(a)
            | Op::BroadcastCols(a)
            | Op::Sum(a)
            | Op::Expand(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Powf(a, _)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::Pick(a, _)
            | Op::Unpick(a, _)
            | Op::SelectRows(a, _)
            | Op::ScatterRows(a, _)
            | Op::Reshape(a)
            | Op::SliceRows(a, _)
            | Op::PadRows(a, _) => f(*a),
        }
    }
}
