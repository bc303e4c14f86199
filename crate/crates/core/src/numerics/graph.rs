//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node index is already a
//! topological order and the backward sweep walks the tape in reverse.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::params::{Gradients, ParamId, ParamStore};
use crate::numerics::sparse::Csr;
use crate::numerics::tensor::{matmul_a_bt, matmul_at_b, matmul_into};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Negative slope of [`Graph::leaky_relu`] used throughout the models.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    /// rhs holds a single value
    Scalar,
    /// rhs is a `1 × n` row repeated over lhs rows
    Row,
}

enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    ScaleRows(Var, Var),
    Scale(Var, S),
    AddConst(Var),
    Sum(Var),
    SumAxis(Var, usize),
    Concat(Vec<Var>, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Arc<[usize]>),
    SoftmaxRows(Var),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, S),
    Exp(Var),
    Log(Var),
    LogSigmoid(Var),
    RowNorm(Var),
    NormalizeRows(Var),
    SpMM(Arc<Csr<S>>, Var),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// A computation record: values, recorded ops and (after `backward`)
/// gradients for every parameter leaf.
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    consumed: bool,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err<T>(what: &str, a: &[usize], b: &[usize]) -> Result<T> {
    Err(Error::Shape(format!("{what}: {a:?} vs {b:?}")))
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, param: None });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Untracked input.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar_const(&mut self, value: S) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Parameter leaf; tracked when the parameter is trainable.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        let v = self.push(store.get(id).clone(), Op::Leaf, store.is_trainable(id));
        self.nodes[v.0].param = Some(id);
        v
    }

    /// Parameter leaf that never receives gradient (stop-gradient).
    pub fn param_frozen(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        self.constant(store.get(id).clone())
    }

    /// Copy of `x` cut off from the tape.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, k2, n) = (av.rows(), av.cols(), bv.rows(), bv.cols());
        if k != k2 {
            return shape_err("matmul", av.shape(), bv.shape());
        }
        let mut out = vec![S::zero(); m * n];
        matmul_into(av.data(), bv.data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transpose();
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Transpose(a), rg))
    }

    fn bcast(&self, a: Var, b: Var, what: &str) -> Result<Bcast> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            Ok(Bcast::Same)
        } else if bv.is_scalar_like() {
            Ok(Bcast::Scalar)
        } else if bv.rows() == 1 && bv.cols() == av.cols() && av.shape().len() == 2 {
            Ok(Bcast::Row)
        } else {
            shape_err(what, av.shape(), bv.shape())
        }
    }

    fn binary(&self, a: Var, b: Var, mode: Bcast, f: impl Fn(S, S) -> S) -> Tensor<S> {
        let (av, bv) = (self.value(a), self.value(b));
        let cols = av.cols();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(idx, &x)| {
                let y = match mode {
                    Bcast::Same => bv.data()[idx],
                    Bcast::Scalar => bv.data()[0],
                    Bcast::Row => bv.data()[idx % cols],
                };
                f(x, y)
            })
            .collect();
        Tensor::from_vec(av.shape(), data).expect("lhs shape")
    }

    /// Elementwise sum; `b` may also be a scalar or a row vector.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mode = self.bcast(a, b, "add")?;
        let t = self.binary(a, b, mode, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b, mode), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let mode = self.bcast(a, b, "sub")?;
        let t = self.binary(a, b, mode, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b, mode), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let mode = self.bcast(a, b, "mul")?;
        let t = self.binary(a, b, mode, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b, mode), rg))
    }

    /// Multiplies row `i` of `x` by `c[i]` where `c` is `m × 1`.
    pub fn scale_rows(&mut self, x: Var, c: Var) -> Result<Var> {
        let (xv, cv) = (self.value(x), self.value(c));
        if cv.len() != xv.rows() || xv.shape().len() != 2 {
            return shape_err("scale_rows", xv.shape(), cv.shape());
        }
        let cols = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(idx, &v)| v * cv.data()[idx / cols])
            .collect();
        let t = Tensor::from_vec(xv.shape(), data)?;
        let rg = self.rg(&[x, c]);
        Ok(self.push(t, Op::ScaleRows(x, c), rg))
    }

    pub fn scale(&mut self, a: Var, s: S) -> Var {
        let t = self.value(a).map(|x| x * s);
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, s), rg)
    }

    pub fn add_const(&mut self, a: Var, s: S) -> Var {
        let t = self.value(a).map(|x| x + s);
        let rg = self.rg(&[a]);
        self.push(t, Op::AddConst(a), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -S::one())
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(t, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::Domain("mean over empty tensor".into()));
        }
        let s = self.sum(a);
        Ok(self.scale(s, S::one() / S::lit(n as f64)))
    }

    /// Axis 0 reduces rows (`m×n → 1×n`); axis 1 reduces columns (`m×n → m×1`).
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = (av.rows(), av.cols());
        let t = match axis {
            0 => {
                let mut out = vec![S::zero(); n];
                for r in 0..m {
                    for (o, &x) in out.iter_mut().zip(av.row(r)) {
                        *o += x;
                    }
                }
                Tensor::matrix(1, n, out)?
            }
            1 => {
                let out = (0..m).map(|r| av.row(r).iter().copied().sum()).collect();
                Tensor::matrix(m, 1, out)?
            }
            _ => return Err(Error::InvalidArgument(format!("axis {axis}"))),
        };
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::SumAxis(a, axis), rg))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let av = self.value(a);
        let n = if axis == 0 { av.rows() } else { av.cols() };
        if n == 0 || av.is_empty() {
            return Err(Error::Domain("mean over empty axis".into()));
        }
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, S::one() / S::lit(n as f64)))
    }

    /// Concatenates matrices along rows (axis 0) or columns (axis 1).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of nothing".into()));
        }
        let first = self.value(parts[0]);
        let t = match axis {
            0 => {
                let n = first.cols();
                let mut data = Vec::new();
                let mut m = 0;
                for &p in parts {
                    let pv = self.value(p);
                    if pv.cols() != n {
                        return shape_err("concat rows", first.shape(), pv.shape());
                    }
                    m += pv.rows();
                    data.extend_from_slice(pv.data());
                }
                Tensor::matrix(m, n, data)?
            }
            1 => {
                let m = first.rows();
                let mut n = 0;
                for &p in parts {
                    let pv = self.value(p);
                    if pv.rows() != m {
                        return shape_err("concat cols", first.shape(), pv.shape());
                    }
                    n += pv.cols();
                }
                let mut data = Vec::with_capacity(m * n);
                for r in 0..m {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(r));
                    }
                }
                Tensor::matrix(m, n, data)?
            }
            _ => return Err(Error::InvalidArgument(format!("axis {axis}"))),
        };
        let rg = self.rg(parts);
        Ok(self.push(t, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        if start > end || end > av.cols() {
            return Err(Error::Shape(format!("slice {start}..{end} of {:?}", av.shape())));
        }
        let m = av.rows();
        let mut data = Vec::with_capacity(m * (end - start));
        for r in 0..m {
            data.extend_from_slice(&av.row(r)[start..end]);
        }
        let t = Tensor::matrix(m, end - start, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::SliceCols(a, start), rg))
    }

    /// Row lookup (embedding gather); indices may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= av.rows()) {
            return Err(Error::Shape(format!("row {bad} of {:?}", av.shape())));
        }
        let t = av.select_rows(idx);
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::GatherRows(a, idx.into()), rg))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = (av.rows(), av.cols());
        if n == 0 {
            return Err(Error::Domain("softmax over empty row".into()));
        }
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            let row = av.row(r);
            let mx = row.iter().copied().fold(S::neg_infinity(), S::max);
            let exps: Vec<S> = row.iter().map(|&x| (x - mx).exp()).collect();
            let z: S = exps.iter().copied().sum();
            data.extend(exps.into_iter().map(|e| e / z));
        }
        let t = Tensor::from_vec(av.shape(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::SoftmaxRows(a), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(t, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.tanh());
        let rg = self.rg(&[a]);
        self.push(t, Op::Tanh(a), rg)
    }

    pub fn leaky_relu(&mut self, a: Var) -> Var {
        let slope = S::lit(LEAKY_SLOPE);
        let t = self.value(a).map(|x| if x > S::zero() { x } else { x * slope });
        let rg = self.rg(&[a]);
        self.push(t, Op::LeakyRelu(a, slope), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.exp());
        let rg = self.rg(&[a]);
        self.push(t, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.data().iter().any(|&x| x.partial_cmp(&S::zero()) != Some(std::cmp::Ordering::Greater)) {
            return Err(Error::Domain("log of non-positive value".into()));
        }
        let t = av.map(|x| x.ln());
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Log(a), rg))
    }

    /// `ln sigm(x)`, evaluated stably.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(log_sigmoid);
        let rg = self.rg(&[a]);
        self.push(t, Op::LogSigmoid(a), rg)
    }

    /// Row-wise Euclidean norm, `m×n → m×1`.
    pub fn row_norm(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let m = av.rows();
        let out = (0..m)
            .map(|r| av.row(r).iter().map(|&x| x * x).sum::<S>().sqrt())
            .collect();
        let t = Tensor::matrix(m, 1, out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::RowNorm(a), rg))
    }

    /// Rows scaled to unit norm; zero rows stay zero.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = (av.rows(), av.cols());
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            let row = av.row(r);
            let nrm = row.iter().map(|&x| x * x).sum::<S>().sqrt();
            if nrm > S::zero() {
                data.extend(row.iter().map(|&x| x / nrm));
            } else {
                data.extend(std::iter::repeat_n(S::zero(), n));
            }
        }
        let t = Tensor::matrix(m, n, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::NormalizeRows(a), rg))
    }

    /// Row-wise cosine similarity, `m×n, m×n → m×1`. Zero rows give 0.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err("cosine_similarity", self.shape(a), self.shape(b));
        }
        let na = self.normalize_rows(a)?;
        let nb = self.normalize_rows(b)?;
        let p = self.mul(na, nb)?;
        self.sum_axis(p, 1)
    }

    /// Row-wise inner product, `m×n, m×n → m×1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err("row_dot", self.shape(a), self.shape(b));
        }
        let p = self.mul(a, b)?;
        self.sum_axis(p, 1)
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err("mse", self.shape(a), self.shape(b));
        }
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        self.mean(sq)
    }

    /// Sparse-dense product `a · x` with a constant sparse `a`.
    pub fn spmm(&mut self, a: &Arc<Csr<S>>, x: Var) -> Result<Var> {
        let t = a.matmul_dense(self.value(x))?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::SpMM(Arc::clone(a), x), rg))
    }

    /// Runs the backward sweep from a scalar loss and returns parameter
    /// gradients. The record is consumed: its buffers are released and a
    /// second call fails.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<S>> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let lv = self.value(loss);
        if !lv.is_scalar_like() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        if !lv.item().is_finite() {
            return Err(Error::NonFinite(format!("loss = {}", lv.item())));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), S::one()));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
        }

        let mut out = Gradients::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Some(pid), true) = (node.param, node.requires_grad) {
                if let Some(g) = grads[idx].take() {
                    out.insert_or_add(pid, g);
                }
            }
        }
        self.nodes.clear();
        self.consumed = true;
        Ok(out)
    }

    fn propagate(&self, idx: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let y = &node.value;
        let acc = |grads: &mut [Option<Tensor<S>>], v: Var, delta: Tensor<S>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(cur) => {
                    for (c, &d) in cur.data_mut().iter_mut().zip(delta.data()) {
                        *c += d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        let like = |v: Var, data: Vec<S>| Tensor::from_vec(self.nodes[v.0].value.shape(), data).expect("shape");

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![S::zero(); m * k];
                    matmul_a_bt(g.data(), bv.data(), &mut da, m, n, k);
                    acc(grads, *a, like(*a, da));
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![S::zero(); k * n];
                    matmul_at_b(av.data(), g.data(), &mut db, m, k, n);
                    acc(grads, *b, like(*b, db));
                }
            }
            Op::Transpose(a) => {
                let t = g.transpose();
                acc(grads, *a, like(*a, t.into_data()));
            }
            Op::Add(a, b, mode) | Op::Sub(a, b, mode) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -S::one() } else { S::one() };
                acc(grads, *a, like(*a, g.data().to_vec()));
                if self.nodes[b.0].requires_grad {
                    let db = reduce_bcast(g.data(), g.cols(), *mode, val(*b).len());
                    acc(grads, *b, like(*b, db.into_iter().map(|x| x * sign).collect()));
                }
            }
            Op::Mul(a, b, mode) => {
                let (av, bv) = (val(*a), val(*b));
                let cols = av.cols();
                if self.nodes[a.0].requires_grad {
                    let da = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, &gi)| gi * bcast_at(bv.data(), *mode, i, cols))
                        .collect();
                    acc(grads, *a, like(*a, da));
                }
                if self.nodes[b.0].requires_grad {
                    let prod: Vec<S> = g.data().iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                    let db = reduce_bcast(&prod, cols, *mode, bv.len());
                    acc(grads, *b, like(*b, db));
                }
            }
            Op::ScaleRows(x, c) => {
                let (xv, cv) = (val(*x), val(*c));
                let cols = xv.cols();
                if self.nodes[x.0].requires_grad {
                    let dx = g.data().iter().enumerate().map(|(i, &gi)| gi * cv.data()[i / cols]).collect();
                    acc(grads, *x, like(*x, dx));
                }
                if self.nodes[c.0].requires_grad {
                    let mut dc = vec![S::zero(); cv.len()];
                    for (i, (&gi, &xi)) in g.data().iter().zip(xv.data()).enumerate() {
                        dc[i / cols] += gi * xi;
                    }
                    acc(grads, *c, like(*c, dc));
                }
            }
            Op::Scale(a, s) => {
                acc(grads, *a, like(*a, g.data().iter().map(|&x| x * *s).collect()));
            }
            Op::AddConst(a) => acc(grads, *a, like(*a, g.data().to_vec())),
            Op::Sum(a) => {
                let n = val(*a).len();
                acc(grads, *a, like(*a, vec![g.item(); n]));
            }
            Op::SumAxis(a, axis) => {
                let av = val(*a);
                let (m, n) = (av.rows(), av.cols());
                let mut d = vec![S::zero(); m * n];
                for r in 0..m {
                    for c in 0..n {
                        d[r * n + c] = if *axis == 0 { g.data()[c] } else { g.data()[r] };
                    }
                }
                acc(grads, *a, like(*a, d));
            }
            Op::Concat(parts, axis) => {
                if *axis == 0 {
                    let mut offset = 0;
                    for &p in parts {
                        let len = val(p).len();
                        acc(grads, p, like(p, g.data()[offset..offset + len].to_vec()));
                        offset += len;
                    }
                } else {
                    let m = g.rows();
                    let mut col = 0;
                    for &p in parts {
                        let w = val(p).cols();
                        let mut d = Vec::with_capacity(m * w);
                        for r in 0..m {
                            d.extend_from_slice(&g.row(r)[col..col + w]);
                        }
                        acc(grads, p, like(p, d));
                        col += w;
                    }
                }
            }
            Op::SliceCols(a, start) => {
                let av = val(*a);
                let (m, n) = (av.rows(), av.cols());
                let w = g.cols();
                let mut d = vec![S::zero(); m * n];
                for r in 0..m {
                    d[r * n + start..r * n + start + w].copy_from_slice(g.row(r));
                }
                acc(grads, *a, like(*a, d));
            }
            Op::GatherRows(a, idx) => {
                let av = val(*a);
                let n = av.cols();
                let mut d = vec![S::zero(); av.len()];
                for (r, &src) in idx.iter().enumerate() {
                    for (o, &gv) in d[src * n..(src + 1) * n].iter_mut().zip(g.row(r)) {
                        *o += gv;
                    }
                }
                acc(grads, *a, like(*a, d));
            }
            Op::SoftmaxRows(a) => {
                let (m, n) = (y.rows(), y.cols());
                let mut d = vec![S::zero(); m * n];
                for r in 0..m {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: S = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for c in 0..n {
                        d[r * n + c] = yr[c] * (gr[c] - dot);
                    }
                }
                acc(grads, *a, like(*a, d));
            }
            Op::Sigmoid(a) => {
                let d = g.data().iter().zip(y.data()).map(|(&gi, &s)| gi * s * (S::one() - s)).collect();
                acc(grads, *a, like(*a, d));
            }
            Op::Tanh(a) => {
                let d = g.data().iter().zip(y.data()).map(|(&gi, &t)| gi * (S::one() - t * t)).collect();
                acc(grads, *a, like(*a, d));
            }
            Op::LeakyRelu(a, slope) => {
                let d = g
                    .data()
                    .iter()
                    .zip(val(*a).data())
                    .map(|(&gi, &x)| if x > S::zero() { gi } else { gi * *slope })
                    .collect();
                acc(grads, *a, like(*a, d));
            }
            Op::Exp(a) => {
                let d = g.data().iter().zip(y.data()).map(|(&gi, &e)| gi * e).collect();
                acc(grads, *a, like(*a, d));
            }
            Op::Log(a) => {
                let d = g.data().iter().zip(val(*a).data()).map(|(&gi, &x)| gi / x).collect();
                acc(grads, *a, like(*a, d));
            }
            Op::LogSigmoid(a) => {
                let d = g.data().iter().zip(val(*a).data()).map(|(&gi, &x)| gi * sigmoid(-x)).collect();
                acc(grads, *a, like(*a, d));
            }
            Op::RowNorm(a) => {
                let av = val(*a);
                let n = av.cols();
                let mut d = vec![S::zero(); av.len()];
                for r in 0..av.rows() {
                    let nrm = y.data()[r];
                    if nrm > S::zero() {
                        let s = g.data()[r] / nrm;
                        for (o, &x) in d[r * n..(r + 1) * n].iter_mut().zip(av.row(r)) {
                            *o = s * x;
                        }
                    }
                }
                acc(grads, *a, like(*a, d));
            }
            Op::NormalizeRows(a) => {
                let av = val(*a);
                let n = av.cols();
                let mut d = vec![S::zero(); av.len()];
                for r in 0..av.rows() {
                    let nrm = av.row(r).iter().map(|&x| x * x).sum::<S>().sqrt();
                    if nrm > S::zero() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: S = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for c in 0..n {
                            d[r * n + c] = (gr[c] - yr[c] * dot) / nrm;
                        }
                    }
                }
                acc(grads, *a, like(*a, d));
            }
            Op::SpMM(mat, x) => {
                let d = mat.transpose_matmul_dense(g);
                acc(grads, *x, like(*x, d.into_data()));
            }
        }
        Ok(())
    }
}

fn bcast_at<S: Scalar>(b: &[S], mode: Bcast, i: usize, cols: usize) -> S {
    match mode {
        Bcast::Same => b[i],
        Bcast::Scalar => b[0],
        Bcast::Row => b[i % cols],
    }
}

fn reduce_bcast<S: Scalar>(g: &[S], cols: usize, mode: Bcast, out_len: usize) -> Vec<S> {
    match mode {
        Bcast::Same => g.to_vec(),
        Bcast::Scalar => {
            let mut v = vec![S::zero(); out_len];
            v[0] = g.iter().copied().sum();
            v
        }
        Bcast::Row => {
            let mut v = vec![S::zero(); cols];
            for (i, &x) in g.iter().enumerate() {
                v[i % cols] += x;
            }
            v
        }
    }
}

pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

pub fn log_sigmoid<S: Scalar>(x: S) -> S {
    // ln σ(x) = -softplus(-x)
    if x >= S::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}
