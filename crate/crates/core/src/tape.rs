//! Reverse-mode differentiation over an append-only operation record.
//!
//! A [`Tape`] stores every intermediate value together with the operation that
//! produced it. Records only ever reference earlier records, so replaying the
//! adjoints from the last record to the first visits each node after all of
//! its consumers.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
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
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowwise(Var, Var),
    RepeatRows(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Square(Var),
    Rsqrt(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    Sum(Var),
    SumRows(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf whose gradient is wanted.
    pub fn variable(&mut self, value: Tensor) -> Result<Var> {
        value.ensure_finite("variable leaf")?;
        Ok(self.push(value, Op::Leaf, true))
    }

    /// A leaf treated as data: no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        value.ensure_finite("constant leaf")?;
        Ok(self.push(value, Op::Leaf, false))
    }

    /// Binds a parameter from `store` as a gradient-carrying leaf. Binding the
    /// same parameter twice returns the same leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, true);
        self.params.insert(id, v);
        v
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(&p, &v)| (p, v))
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::ShapeMismatch {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    fn dims2(&self, v: Var) -> Option<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Some((*r, *c)),
            _ => None,
        }
    }

    fn finite(&self, t: Tensor, op: &str) -> Result<Tensor> {
        t.ensure_finite(op)?;
        Ok(t)
    }

    /// `(m×k) · (k×n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (k2, n)) = match (self.dims2(a), self.dims2(b)) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(self.mismatch("matmul", a, b)),
        };
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let data = matmul_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        let t = self.finite(Tensor::new(vec![m, n], data)?, "matmul")?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::MatMul(a, b), ng))
    }

    /// `(m×k) · (n×k)ᵀ`; the layout used by weight matrices stored as `out × in`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (n, k2)) = match (self.dims2(a), self.dims2(b)) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(self.mismatch("matmul_t", a, b)),
        };
        if k != k2 {
            return Err(self.mismatch("matmul_t", a, b));
        }
        let data = matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        let t = self.finite(Tensor::new(vec![m, n], data)?, "matmul_t")?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::MatMulT(a, b), ng))
    }

    fn zip(&self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(name, a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.finite(t, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "add", |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "sub", |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "mul", |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    /// Adds the vector `b` (length n) to every row of the `m×n` matrix `a`.
    pub fn add_rowwise(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.dims2(a).ok_or_else(|| self.mismatch("add_rowwise", a, b))?;
        if self.shape(b) != [n] {
            return Err(self.mismatch("add_rowwise", a, b));
        }
        let bias = self.value(b).data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, y) in row.iter_mut().zip(bias) {
                *x += y;
            }
        }
        let t = self.finite(Tensor::new(vec![m, n], data)?, "add_rowwise")?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::AddRowwise(a, b), ng))
    }

    /// Stacks the vector `a` into `rows` identical rows.
    pub fn repeat_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let n = match self.shape(a) {
            [n] => *n,
            s => {
                return Err(Error::ShapeMismatch {
                    op: "repeat_rows",
                    lhs: s.to_vec(),
                    rhs: vec![rows],
                })
            }
        };
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            data.extend_from_slice(src);
        }
        let t = Tensor::new(vec![rows, n], data)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::RepeatRows(a), ng))
    }

    fn unary(&self, a: Var, name: &str, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let t = self.value(a).map(f);
        self.finite(t, name)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let t = self.unary(a, "scale", |x| k * x)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Scale(a, k), ng))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        let t = self.unary(a, "add_scalar", |x| x + k)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::AddScalar(a), ng))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let t = self.unary(a, "sigmoid", logistic)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Sigmoid(a), ng))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let t = self.unary(a, "tanh", f64::tanh)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Tanh(a), ng))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.unary(a, "relu", |x| x.max(0.0))?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Relu(a), ng))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let t = self.unary(a, "square", |x| x * x)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Square(a), ng))
    }

    /// Elementwise `1/√x`; rejects non-positive input.
    pub fn rsqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(Error::invalid("rsqrt of non-positive value"));
        }
        let t = self.unary(a, "rsqrt", |x| 1.0 / x.sqrt())?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Rsqrt(a), ng))
    }

    /// Concatenates along the last axis. All leading extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(self.mismatch("concat", first, p));
            }
            total += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let w = self.value(p).cols();
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let t = Tensor::new(shape, data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(t, Op::Concat(parts.to_vec()), ng))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let w = *shape.last().unwrap_or(&0);
        if start > end || end > w {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                lhs: shape,
                rhs: vec![start, end],
            });
        }
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&src[r * w + start..r * w + end]);
        }
        let mut out_shape = shape[..shape.len() - 1].to_vec();
        out_shape.push(end - start);
        let t = Tensor::new(out_shape, data)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::SliceCols(a, start), ng))
    }

    /// Row lookup: `table` is `vocab × dim`, result is `indices.len() × dim`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (vocab, dim) = self
            .dims2(table)
            .ok_or_else(|| Error::invalid("gather table must be 2-D"))?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= vocab) {
            return Err(Error::invalid(format!(
                "gather index {bad} out of range for vocabulary {vocab}"
            )));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            data.extend_from_slice(&src[i * dim..(i + 1) * dim]);
        }
        let t = Tensor::new(vec![indices.len(), dim], data)?;
        let ng = self.ng(table);
        Ok(self.push(t, Op::Gather(table, indices.to_vec()), ng))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let t = Tensor::scalar(self.value(a).sum());
        let t = self.finite(t, "sum")?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Sum(a), ng))
    }

    /// Column sums of an `m×n` matrix, giving a length-n vector.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (_, n) = self
            .dims2(a)
            .ok_or_else(|| Error::invalid("sum_rows expects a matrix"))?;
        let mut out = vec![0.0; n];
        for row in self.value(a).data().chunks(n) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        let t = self.finite(Tensor::vector(out), "sum_rows")?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::SumRows(a), ng))
    }

    /// `Σ a ⊙ w` for a constant weight tensor `w`; handy for seeding adjoints.
    pub fn weighted_sum(&mut self, a: Var, weights: Tensor) -> Result<Var> {
        let w = self.constant(weights)?;
        let p = self.mul(a, w)?;
        self.sum(p)
    }

    /// Reverse sweep from a scalar root. Returns the adjoint of every
    /// gradient-carrying leaf.
    pub fn backward(&self, root: Var) -> Result<Grads> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Tensor::full(root_value.shape(), 1.0));

        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let g = match &adj[i] {
                Some(_) if matches!(self.nodes[i].op, Op::Leaf) => continue,
                Some(g) => g.clone(),
                None => continue,
            };
            self.propagate(i, &g, &mut adj);
        }

        let mut leaves = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate().take(root.0 + 1) {
            if matches!(node.op, Op::Leaf) && node.needs_grad {
                let g = adj[i]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                leaves.insert(Var(i), g);
            }
        }
        Ok(Grads { leaves })
    }

    fn propagate(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims2(*a).unwrap();
                let n = out.cols();
                if self.ng(*a) {
                    let da = matmul_nt(gd, self.value(*b).data(), m, n, k);
                    accumulate(adj, *a, self.shape(*a), da);
                }
                if self.ng(*b) {
                    let db = matmul_tn(self.value(*a).data(), gd, m, k, n);
                    accumulate(adj, *b, self.shape(*b), db);
                }
            }
            Op::MatMulT(a, b) => {
                let (m, k) = self.dims2(*a).unwrap();
                let n = out.cols();
                if self.ng(*a) {
                    let da = matmul_nn(gd, self.value(*b).data(), m, n, k);
                    accumulate(adj, *a, self.shape(*a), da);
                }
                if self.ng(*b) {
                    let db = matmul_tn(gd, self.value(*a).data(), m, n, k);
                    accumulate(adj, *b, self.shape(*b), db);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.ng(v) {
                        accumulate(adj, v, out.shape(), gd.to_vec());
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.ng(*a) {
                    accumulate(adj, *a, out.shape(), gd.to_vec());
                }
                if self.ng(*b) {
                    accumulate(adj, *b, out.shape(), gd.iter().map(|x| -x).collect());
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.ng(*a) {
                    let d = gd.iter().zip(bv).map(|(g, y)| g * y).collect();
                    accumulate(adj, *a, out.shape(), d);
                }
                if self.ng(*b) {
                    let d = gd.iter().zip(av).map(|(g, x)| g * x).collect();
                    accumulate(adj, *b, out.shape(), d);
                }
            }
            Op::AddRowwise(a, b) => {
                if self.ng(*a) {
                    accumulate(adj, *a, out.shape(), gd.to_vec());
                }
                if self.ng(*b) {
                    accumulate(adj, *b, self.shape(*b), column_sums(gd, out.cols()));
                }
            }
            Op::RepeatRows(a) => {
                accumulate(adj, *a, self.shape(*a), column_sums(gd, out.cols()));
            }
            Op::Scale(a, k) => {
                accumulate(adj, *a, out.shape(), gd.iter().map(|g| g * k).collect());
            }
            Op::AddScalar(a) => {
                accumulate(adj, *a, out.shape(), gd.to_vec());
            }
            Op::Sigmoid(a) => {
                let d = gd
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                accumulate(adj, *a, out.shape(), d);
            }
            Op::Tanh(a) => {
                let d = gd
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                accumulate(adj, *a, out.shape(), d);
            }
            Op::Relu(a) => {
                let d = gd
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(adj, *a, out.shape(), d);
            }
            Op::Square(a) => {
                let d = gd
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(g, x)| 2.0 * g * x)
                    .collect();
                accumulate(adj, *a, out.shape(), d);
            }
            Op::Rsqrt(a) => {
                // d/dx x^{-1/2} = -½ y³
                let d = gd
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| -0.5 * g * y * y * y)
                    .collect();
                accumulate(adj, *a, out.shape(), d);
            }
            Op::Concat(parts) => {
                let total = out.cols();
                let rows = out.numel() / total.max(1);
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.ng(p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                        }
                        accumulate(adj, p, self.shape(p), d);
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let shape = self.shape(*a);
                let w = *shape.last().unwrap();
                let sw = out.cols();
                let mut d = vec![0.0; self.value(*a).numel()];
                if sw > 0 {
                    for (r, grow) in gd.chunks(sw).enumerate() {
                        d[r * w + start..r * w + start + sw].copy_from_slice(grow);
                    }
                }
                accumulate(adj, *a, shape, d);
            }
            Op::Gather(table, indices) => {
                let dim = self.value(*table).cols();
                let mut d = vec![0.0; self.value(*table).numel()];
                for (r, &idx) in indices.iter().enumerate() {
                    for j in 0..dim {
                        d[idx * dim + j] += gd[r * dim + j];
                    }
                }
                accumulate(adj, *table, self.shape(*table), d);
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                accumulate(adj, *a, self.shape(*a), vec![gd[0]; n]);
            }
            Op::SumRows(a) => {
                let (m, n) = self.dims2(*a).unwrap();
                let mut d = Vec::with_capacity(m * n);
                for _ in 0..m {
                    d.extend_from_slice(gd);
                }
                accumulate(adj, *a, self.shape(*a), d);
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, shape: &[usize], d: Vec<f64>) {
    match &mut adj[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(&d) {
                *e += x;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), d).expect("adjoint shape"));
        }
    }
}

fn column_sums(data: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    if cols == 0 {
        return out;
    }
    for row in data.chunks(cols) {
        for (o, x) in out.iter_mut().zip(row) {
            *o += x;
        }
    }
    out
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Leaf adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Grads {
    leaves: HashMap<Var, Tensor>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v)
    }

    /// Adjoint of `v`; panics when `v` is not a gradient-carrying leaf.
    pub fn wrt(&self, v: Var) -> &Tensor {
        self.leaves
            .get(&v)
            .unwrap_or_else(|| panic!("{v:?} is not a variable leaf of this tape"))
    }
}
