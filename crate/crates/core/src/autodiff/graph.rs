use std::sync::Arc;

use super::{AutodiffError, Tensor};
use crate::Scalar;

/// Handle to a node in a [`Graph`]. Only meaningful for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    Scale(T),
    AddScalar(T),
    MatMul,
    Transpose,
    Reshape,
    Sum,
    Mean,
    BroadcastScalar,
    SumRows,
    BroadcastRows,
    SumCols,
    BroadcastCols,
    Relu,
    LeakyRelu(T),
    Tanh,
    Exp,
    Log,
    Recip,
    Sqrt,
    Sigmoid,
    LogSigmoid,
    Softmax,
    LogSoftmax,
    SquaredNorm,
    ConcatCols,
    SliceCols { start: usize },
    EmbedCols { start: usize },
    Gather(Arc<[usize]>),
    ScatterRows { labels: Arc<[usize]> },
}

impl<T> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Reshape => "reshape",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::BroadcastScalar => "broadcast_scalar",
            Op::SumRows => "sum_rows",
            Op::BroadcastRows => "broadcast_rows",
            Op::SumCols => "sum_cols",
            Op::BroadcastCols => "broadcast_cols",
            Op::Relu => "relu",
            Op::LeakyRelu(_) => "leaky_relu",
            Op::Tanh => "tanh",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Recip => "recip",
            Op::Sqrt => "sqrt",
            Op::Sigmoid => "sigmoid",
            Op::LogSigmoid => "log_sigmoid",
            Op::Softmax => "softmax",
            Op::LogSoftmax => "log_softmax",
            Op::SquaredNorm => "squared_norm",
            Op::ConcatCols => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::EmbedCols { .. } => "embed_cols",
            Op::Gather(_) => "gather",
            Op::ScatterRows { .. } => "scatter_rows",
        }
    }
}

/// A recorded operation with its value.
#[derive(Clone, Debug)]
pub struct Node<T> {
    pub(crate) op: Op<T>,
    pub(crate) parents: Vec<Var>,
    pub(crate) value: Tensor<T>,
    pub(crate) requires_grad: bool,
}

impl<T> Node<T> {
    pub fn op_name(&self) -> &'static str {
        self.op.name()
    }

    pub fn parents(&self) -> &[Var] {
        &self.parents
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

/// Append-only tape of operations. Node indices are a topological order.
///
/// Gradients are built out of ordinary graph operations, so a gradient is
/// itself differentiable when `create_graph` is on (the default).
#[derive(Clone, Debug)]
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
    pub(crate) create_graph: bool,
    pub(crate) recording: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

type Res = Result<Var, AutodiffError>;

fn leaky_slope<T: Scalar>(v: T, alpha: T) -> T {
    if v > T::zero() {
        T::one()
    } else {
        alpha
    }
}

fn log_sigmoid<T: Scalar>(v: T) -> T {
    // min(v, 0) - log1p(exp(-|v|))
    v.min(T::zero()) - (-v.abs()).exp().ln_1p()
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), create_graph: true, recording: true }
    }

    /// A graph whose backward passes produce plain (non-differentiable) values.
    /// Cheaper for first-order training loops; second-order queries are refused.
    pub fn first_order() -> Self {
        Self { nodes: Vec::new(), create_graph: false, recording: true }
    }

    pub fn create_graph(&self) -> bool {
        self.create_graph
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> T {
        self.nodes[v.0].value.item()
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op: Op::Leaf, parents: Vec::new(), value, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op: Op::Constant, parents: Vec::new(), value, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar_constant(&mut self, value: T) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Ancestor chain of `idx` following first parents, e.g. `log <- sigmoid <- leaf`.
    fn node_path(&self, op: &'static str, parents: &[Var]) -> String {
        let mut path = vec![op.to_string()];
        let mut cur = parents.first().copied();
        while let Some(v) = cur {
            let n = &self.nodes[v.0];
            path.push(format!("{}#{}", n.op.name(), v.0));
            cur = n.parents.first().copied();
            if path.len() > 32 {
                path.push("...".into());
                break;
            }
        }
        path.join(" <- ")
    }

    fn push(&mut self, op: Op<T>, parents: Vec<Var>, value: Tensor<T>) -> Res {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite {
                op: op.name(),
                node: self.nodes.len(),
                path: self.node_path(op.name(), &parents),
            });
        }
        if !self.recording {
            return Ok(self.constant(value));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { op, parents, value, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn require_2d(&self, op: &'static str, a: Var) -> Result<(usize, usize), AutodiffError> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(AutodiffError::ShapeMismatch { op, lhs: s.to_vec(), rhs: vec![] });
        }
        Ok((s[0], s[1]))
    }

    fn unary(&mut self, op: Op<T>, a: Var, f: impl Fn(T) -> T) -> Res {
        let value = self.value(a).map(f);
        self.push(op, vec![a], value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Res {
        self.same_shape("add", a, b)?;
        let value = self.value(a).add(self.value(b));
        self.push(Op::Add, vec![a, b], value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Res {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).sub(self.value(b));
        self.push(Op::Sub, vec![a, b], value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Res {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(Op::Mul, vec![a, b], value)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Res {
        self.unary(Op::Scale(c), a, |x| x * c)
    }

    pub fn neg(&mut self, a: Var) -> Res {
        self.scale(a, -T::one())
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Res {
        self.unary(Op::AddScalar(c), a, |x| x + c)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Res {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul, vec![a, b], value)
    }

    pub fn transpose(&mut self, a: Var) -> Res {
        self.require_2d("transpose", a)?;
        let value = self.value(a).transpose();
        self.push(Op::Transpose, vec![a], value)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Res {
        let value = self.value(a).reshape(shape).map_err(|_| AutodiffError::ShapeMismatch {
            op: "reshape",
            lhs: self.shape(a).to_vec(),
            rhs: vec![],
        })?;
        self.push(Op::Reshape, vec![a], value)
    }

    pub fn sum(&mut self, a: Var) -> Res {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push(Op::Sum, vec![a], Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: Var) -> Res {
        let t = self.value(a);
        let n = T::from_usize(t.len()).unwrap();
        let s: T = t.data().iter().copied().sum();
        self.push(Op::Mean, vec![a], Tensor::scalar(s / n))
    }

    /// Sum of elementwise products.
    pub fn dot(&mut self, a: Var, b: Var) -> Res {
        let p = self.mul(a, b)?;
        self.sum(p)
    }

    /// Repeats a one-element tensor to `shape`.
    pub fn broadcast_scalar(&mut self, a: Var, shape: Vec<usize>) -> Res {
        if self.value(a).len() != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "broadcast_scalar",
                lhs: self.shape(a).to_vec(),
                rhs: shape,
            });
        }
        let value = Tensor::filled(shape, self.value(a).item());
        self.push(Op::BroadcastScalar, vec![a], value)
    }

    /// `[n, m] -> [m]`
    pub fn sum_rows(&mut self, a: Var) -> Res {
        let (n, m) = self.require_2d("sum_rows", a)?;
        let t = self.value(a);
        let mut out = vec![T::zero(); m];
        for i in 0..n {
            for (o, &v) in out.iter_mut().zip(&t.data()[i * m..(i + 1) * m]) {
                *o += v;
            }
        }
        self.push(Op::SumRows, vec![a], Tensor::vector(out))
    }

    /// `[m] -> [n, m]`
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Res {
        if self.value(a).ndim() != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "broadcast_rows",
                lhs: self.shape(a).to_vec(),
                rhs: vec![n],
            });
        }
        let row = self.value(a).data();
        let m = row.len();
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(row);
        }
        self.push(Op::BroadcastRows, vec![a], Tensor::new(vec![n, m], out)?)
    }

    /// `[n, m] -> [n, 1]`
    pub fn sum_cols(&mut self, a: Var) -> Res {
        let (n, m) = self.require_2d("sum_cols", a)?;
        let t = self.value(a);
        let out = (0..n).map(|i| t.data()[i * m..(i + 1) * m].iter().copied().sum()).collect();
        self.push(Op::SumCols, vec![a], Tensor::new(vec![n, 1], out)?)
    }

    /// `[n, 1] -> [n, m]`
    pub fn broadcast_cols(&mut self, a: Var, m: usize) -> Res {
        let (n, c) = self.require_2d("broadcast_cols", a)?;
        if c != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "broadcast_cols",
                lhs: self.shape(a).to_vec(),
                rhs: vec![n, m],
            });
        }
        let t = self.value(a);
        let out = t.data().iter().flat_map(|&v| std::iter::repeat_n(v, m)).collect();
        self.push(Op::BroadcastCols, vec![a], Tensor::new(vec![n, m], out)?)
    }

    /// `x W + b` for a batch `x: [n, in]`, `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Res {
        let xw = self.matmul(x, w)?;
        let n = self.shape(x)[0];
        let bb = self.broadcast_rows(b, n)?;
        self.add(xw, bb)
    }

    pub fn relu(&mut self, a: Var) -> Res {
        self.unary(Op::Relu, a, |x| x.max(T::zero()))
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: T) -> Res {
        self.unary(Op::LeakyRelu(alpha), a, |x| x * leaky_slope(x, alpha))
    }

    pub fn tanh(&mut self, a: Var) -> Res {
        self.unary(Op::Tanh, a, |x| x.tanh())
    }

    pub fn exp(&mut self, a: Var) -> Res {
        self.unary(Op::Exp, a, |x| x.exp())
    }

    pub fn log(&mut self, a: Var) -> Res {
        self.unary(Op::Log, a, |x| x.ln())
    }

    pub fn recip(&mut self, a: Var) -> Res {
        self.unary(Op::Recip, a, |x| x.recip())
    }

    pub fn sqrt(&mut self, a: Var) -> Res {
        self.unary(Op::Sqrt, a, |x| x.sqrt())
    }

    pub fn sigmoid(&mut self, a: Var) -> Res {
        self.unary(Op::Sigmoid, a, sigmoid)
    }

    /// `log(sigmoid(x))`, stable for large `|x|`.
    pub fn log_sigmoid(&mut self, a: Var) -> Res {
        self.unary(Op::LogSigmoid, a, log_sigmoid)
    }

    fn row_softmax(t: &Tensor<T>, log: bool) -> Vec<T> {
        let (n, m) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let row = &t.data()[i * m..(i + 1) * m];
            let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
            out.extend(row.iter().map(|&v| if log { v - lse } else { (v - lse).exp() }));
        }
        out
    }

    /// Row-wise softmax over the last axis of a `[n, C]` tensor.
    pub fn softmax(&mut self, a: Var) -> Res {
        let (n, m) = self.require_2d("softmax", a)?;
        let out = Self::row_softmax(self.value(a), false);
        self.push(Op::Softmax, vec![a], Tensor::new(vec![n, m], out)?)
    }

    /// Row-wise log-softmax over the last axis of a `[n, C]` tensor.
    pub fn log_softmax(&mut self, a: Var) -> Res {
        let (n, m) = self.require_2d("log_softmax", a)?;
        let out = Self::row_softmax(self.value(a), true);
        self.push(Op::LogSoftmax, vec![a], Tensor::new(vec![n, m], out)?)
    }

    pub fn squared_norm(&mut self, a: Var) -> Res {
        let t = self.value(a);
        let s = t.dot(t);
        self.push(Op::SquaredNorm, vec![a], Tensor::scalar(s))
    }

    /// Concatenates `[n, c_i]` tensors along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Res {
        let first = *parts.first().ok_or_else(|| AutodiffError::Contract("empty concat".into()))?;
        let (n, _) = self.require_2d("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.require_2d("concat_cols", p)?;
            if r != n {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.push(Op::ConcatCols, parts.to_vec(), Tensor::new(vec![n, total], out)?)
    }

    /// Columns `start..start+len` of a `[n, m]` tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Res {
        let (n, m) = self.require_2d("slice_cols", a)?;
        if start + len > m {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice_cols",
                lhs: vec![n, m],
                rhs: vec![start, len],
            });
        }
        let t = self.value(a);
        let mut out = Vec::with_capacity(n * len);
        for i in 0..n {
            out.extend_from_slice(&t.data()[i * m + start..i * m + start + len]);
        }
        self.push(Op::SliceCols { start }, vec![a], Tensor::new(vec![n, len], out)?)
    }

    /// Places a `[n, c]` tensor into zero columns `start..start+c` of a `[n, total]` tensor.
    fn embed_cols(&mut self, a: Var, start: usize, total: usize) -> Res {
        let (n, c) = self.require_2d("embed_cols", a)?;
        let t = self.value(a);
        let mut out = vec![T::zero(); n * total];
        for i in 0..n {
            out[i * total + start..i * total + start + c].copy_from_slice(&t.data()[i * c..(i + 1) * c]);
        }
        self.push(Op::EmbedCols { start }, vec![a], Tensor::new(vec![n, total], out)?)
    }

    /// Embedding lookup: rows `labels[i]` of a `[C, k]` table.
    pub fn gather_rows(&mut self, table: Var, labels: &[usize]) -> Res {
        let (c, k) = self.require_2d("gather_rows", table)?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(AutodiffError::Contract(format!("label {bad} out of range for {c} rows")));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(labels.len() * k);
        for &l in labels {
            out.extend_from_slice(&t.data()[l * k..(l + 1) * k]);
        }
        let value = Tensor::new(vec![labels.len(), k], out)?;
        self.push(Op::Gather(labels.into()), vec![table], value)
    }

    fn scatter_rows(&mut self, a: Var, labels: Arc<[usize]>, rows: usize) -> Res {
        let (_, k) = self.require_2d("scatter_rows", a)?;
        let t = self.value(a);
        let mut out = vec![T::zero(); rows * k];
        for (i, &l) in labels.iter().enumerate() {
            for j in 0..k {
                out[l * k + j] += t.data()[i * k + j];
            }
        }
        self.push(Op::ScatterRows { labels }, vec![a], Tensor::new(vec![rows, k], out)?)
    }

    /// One-hot encoding of `labels` as a `[n, classes]` constant.
    pub fn one_hot(&mut self, labels: &[usize], classes: usize) -> Res {
        let t = Tensor::one_hot(labels, classes)?;
        Ok(self.constant(t))
    }

    /// Vector-Jacobian products of node `idx` for each parent, given upstream adjoint `g`.
    /// Entries are `None` for parents that do not need a gradient.
    pub(crate) fn vjp(&mut self, idx: usize, g: Var, want: &[bool]) -> Result<Vec<Option<Var>>, AutodiffError> {
        let op = self.nodes[idx].op.clone();
        let parents = self.nodes[idx].parents.clone();
        let y = Var(idx);
        let mut out: Vec<Option<Var>> = vec![None; parents.len()];
        macro_rules! set {
            ($i:expr, $e:expr) => {
                if want[$i] {
                    out[$i] = Some($e);
                }
            };
        }
        match op {
            Op::Leaf | Op::Constant => {}
            Op::Add => {
                set!(0, g);
                set!(1, g);
            }
            Op::Sub => {
                set!(0, g);
                set!(1, self.neg(g)?);
            }
            Op::Mul => {
                let (a, b) = (parents[0], parents[1]);
                set!(0, self.mul(g, b)?);
                set!(1, self.mul(g, a)?);
            }
            Op::Scale(c) => set!(0, self.scale(g, c)?),
            Op::AddScalar(_) => set!(0, g),
            Op::MatMul => {
                let (a, b) = (parents[0], parents[1]);
                if want[0] {
                    let bt = self.transpose(b)?;
                    out[0] = Some(self.matmul(g, bt)?);
                }
                if want[1] {
                    let at = self.transpose(a)?;
                    out[1] = Some(self.matmul(at, g)?);
                }
            }
            Op::Transpose => set!(0, self.transpose(g)?),
            Op::Reshape => {
                let shape = self.shape(parents[0]).to_vec();
                set!(0, self.reshape(g, shape)?);
            }
            Op::Sum => {
                let shape = self.shape(parents[0]).to_vec();
                set!(0, self.broadcast_scalar(g, shape)?);
            }
            Op::Mean => {
                let shape = self.shape(parents[0]).to_vec();
                let n = T::from_usize(self.value(parents[0]).len()).unwrap();
                let b = self.broadcast_scalar(g, shape)?;
                set!(0, self.scale(b, T::one() / n)?);
            }
            Op::BroadcastScalar => {
                let shape = self.shape(parents[0]).to_vec();
                let s = self.sum(g)?;
                set!(0, self.reshape(s, shape)?);
            }
            Op::SumRows => {
                let n = self.shape(parents[0])[0];
                set!(0, self.broadcast_rows(g, n)?);
            }
            Op::BroadcastRows => set!(0, self.sum_rows(g)?),
            Op::SumCols => {
                let m = self.shape(parents[0])[1];
                set!(0, self.broadcast_cols(g, m)?);
            }
            Op::BroadcastCols => set!(0, self.sum_cols(g)?),
            Op::Relu => {
                let mask = self.value(parents[0]).map(|x| if x > T::zero() { T::one() } else { T::zero() });
                let m = self.constant(mask);
                set!(0, self.mul(g, m)?);
            }
            Op::LeakyRelu(alpha) => {
                let mask = self.value(parents[0]).map(|x| leaky_slope(x, alpha));
                let m = self.constant(mask);
                set!(0, self.mul(g, m)?);
            }
            Op::Tanh => {
                let yy = self.mul(y, y)?;
                let ny = self.neg(yy)?;
                let d = self.add_scalar(ny, T::one())?;
                set!(0, self.mul(g, d)?);
            }
            Op::Exp => set!(0, self.mul(g, y)?),
            Op::Log => {
                let r = self.recip(parents[0])?;
                set!(0, self.mul(g, r)?);
            }
            Op::Recip => {
                let yy = self.mul(y, y)?;
                let gy = self.mul(g, yy)?;
                set!(0, self.neg(gy)?);
            }
            Op::Sqrt => {
                let r = self.recip(y)?;
                let h = self.scale(r, T::lit(0.5))?;
                set!(0, self.mul(g, h)?);
            }
            Op::Sigmoid => {
                let yy = self.mul(y, y)?;
                let d = self.sub(y, yy)?;
                set!(0, self.mul(g, d)?);
            }
            Op::LogSigmoid => {
                let na = self.neg(parents[0])?;
                let s = self.sigmoid(na)?;
                set!(0, self.mul(g, s)?);
            }
            Op::Softmax => {
                let m = self.shape(y)[1];
                let gy = self.mul(g, y)?;
                let rs = self.sum_cols(gy)?;
                let b = self.broadcast_cols(rs, m)?;
                let d = self.sub(g, b)?;
                set!(0, self.mul(y, d)?);
            }
            Op::LogSoftmax => {
                let m = self.shape(y)[1];
                let p = self.exp(y)?;
                let rs = self.sum_cols(g)?;
                let b = self.broadcast_cols(rs, m)?;
                let pb = self.mul(p, b)?;
                set!(0, self.sub(g, pb)?);
            }
            Op::SquaredNorm => {
                let a = parents[0];
                let shape = self.shape(a).to_vec();
                let b = self.broadcast_scalar(g, shape)?;
                let ba = self.mul(b, a)?;
                set!(0, self.scale(ba, T::lit(2.0))?);
            }
            Op::ConcatCols => {
                let mut start = 0;
                for (i, &p) in parents.iter().enumerate() {
                    let w = self.shape(p)[1];
                    if want[i] {
                        out[i] = Some(self.slice_cols(g, start, w)?);
                    }
                    start += w;
                }
            }
            Op::SliceCols { start, .. } => {
                let total = self.shape(parents[0])[1];
                set!(0, self.embed_cols(g, start, total)?);
            }
            Op::EmbedCols { start, .. } => {
                let len = self.shape(parents[0])[1];
                set!(0, self.slice_cols(g, start, len)?);
            }
            Op::Gather(labels) => {
                let rows = self.shape(parents[0])[0];
                set!(0, self.scatter_rows(g, labels, rows)?);
            }
            Op::ScatterRows { labels, .. } => set!(0, self.gather_rows(g, &labels)?),
        }
        Ok(out)
    }
}
