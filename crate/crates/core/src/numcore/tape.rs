//! Reverse-mode differentiation over a linear tape of primitive operations.
//!
//! Every primitive appends one node; [`Tape::backward`] walks the nodes in
//! exact reverse order. Values are immutable once recorded.

use std::ops::Range;

use super::tensor::{check_2d, gemm_into, MatRef, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    RmsNorm {
        x: Var,
        gain: Var,
        inv_rms: Vec<T>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    LogSumExp(Var),
    QuickGelu(Var),
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    Block {
        x: Var,
        r0: usize,
        c0: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    NormalizeRows {
        x: Var,
        norms: Vec<T>,
    },
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::RmsNorm { .. } => "rmsnorm",
            Op::Softmax(_) => "softmax_rows",
            Op::LogSoftmax(_) => "log_softmax_rows",
            Op::LogSumExp(_) => "logsumexp_rows",
            Op::QuickGelu(_) => "quick_gelu",
            Op::GatherRows { .. } => "gather_rows",
            Op::Block { .. } => "block",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::MeanRows(_) => "mean_rows",
            Op::Sum(_) => "sum",
            Op::NormalizeRows { .. } => "normalize_rows",
            Op::Gather { .. } => "gather",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of executed primitives.
#[derive(Debug)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

const QUICK_GELU_K: f64 = 1.702;

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Copies a value onto the tape with gradient flow cut.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::from_parts(
            self.nodes[v.0].value.shape().to_vec(),
            g.clone(),
        ))
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("output of {}", op.name())));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Tensor::from_parts(shape, data),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn mat(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        let t = self.value(v);
        check_2d(t, what)?;
        Ok(t.dims2())
    }

    /// `a [m x k] * b [k x n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat(a, "matmul lhs")?;
        let (k2, n) = self.mat(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dimensions differ: {m}x{k} vs {k2}x{n}"
            )));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_into(
            MatRef::new(self.value(a).data(), m, k),
            MatRef::new(self.value(b).data(), k, n),
            T::zero(),
            &mut out,
        );
        self.push(vec![m, n], out, Op::MatMul(a, b), &[a, b])
    }

    /// `a [m x k] * b^T` for `b [n x k]`; the layout of linear-layer weights.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat(a, "matmul_t lhs")?;
        let (n, k2) = self.mat(b, "matmul_t rhs")?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul_t inner dimensions differ: {m}x{k} vs ({n}x{k2})^T"
            )));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_into(
            MatRef::new(self.value(a).data(), m, k),
            MatRef::new(self.value(b).data(), n, k).t(),
            T::zero(),
            &mut out,
        );
        self.push(vec![m, n], out, Op::MatMulT(a, b), &[a, b])
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(a, b, op.name())?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.push(shape, data, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let data = self.value(a).data().iter().map(|&x| x * c).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(shape, data, Op::Scale(a, c), &[a])
    }

    /// Row-wise RMS normalisation: `x / sqrt(mean(x^2) + eps) * gain`.
    pub fn rmsnorm(&mut self, x: Var, gain: Var, eps: T) -> Result<Var> {
        if eps <= T::zero() {
            return Err(Error::contract("rmsnorm eps must be positive"));
        }
        let (rows, d) = self.value(x).dims2();
        if self.value(gain).numel() != d {
            return Err(Error::shape(format!(
                "rmsnorm gain has {} values for width {d}",
                self.value(gain).numel()
            )));
        }
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let mut out = vec![T::zero(); rows * d];
        let mut inv_rms = Vec::with_capacity(rows);
        let dn = T::of(d as f64);
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let ms = row.iter().map(|&v| v * v).sum::<T>() / dn;
            let inv = T::one() / (ms + eps).sqrt();
            inv_rms.push(inv);
            for j in 0..d {
                out[r * d + j] = row[j] * inv * g[j];
            }
        }
        let shape = self.value(x).shape().to_vec();
        self.push(shape, out, Op::RmsNorm { x, gain, inv_rms }, &[x, gain])
    }

    /// Row softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.softmax_impl(x, None)
    }

    /// Row softmax restricted to entries where `allow` is true; disallowed
    /// entries get probability zero. A row with nothing allowed is all zeros.
    pub fn masked_softmax_rows(&mut self, x: Var, allow: &[bool]) -> Result<Var> {
        if allow.len() != self.value(x).numel() {
            return Err(Error::shape("softmax mask size differs from input"));
        }
        self.softmax_impl(x, Some(allow))
    }

    fn softmax_impl(&mut self, x: Var, allow: Option<&[bool]>) -> Result<Var> {
        let (rows, cols) = self.mat(x, "softmax_rows")?;
        let xs = self.value(x).data();
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            let row = &xs[r * cols..(r + 1) * cols];
            let ok = |j: usize| allow.is_none_or(|m| m[r * cols + j]);
            let max = (0..cols)
                .filter(|&j| ok(j))
                .map(|j| row[j])
                .fold(T::neg_infinity(), T::max);
            if max == T::neg_infinity() {
                continue;
            }
            let o = &mut out[r * cols..(r + 1) * cols];
            let mut total = T::zero();
            for j in 0..cols {
                if ok(j) {
                    let e = (row[j] - max).exp();
                    o[j] = e;
                    total += e;
                }
            }
            for v in o.iter_mut() {
                *v = *v / total;
            }
        }
        self.push(vec![rows, cols], out, Op::Softmax(x), &[x])
    }

    fn row_lse(row: &[T]) -> T {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln()
    }

    /// `x - logsumexp(x)` per row.
    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.mat(x, "log_softmax_rows")?;
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = &xs[r * cols..(r + 1) * cols];
            let lse = Self::row_lse(row);
            out.extend(row.iter().map(|&v| v - lse));
        }
        self.push(vec![rows, cols], out, Op::LogSoftmax(x), &[x])
    }

    /// Max-shifted `log(sum(exp(x)))` per row, giving `[rows x 1]`.
    pub fn logsumexp_rows(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.mat(x, "logsumexp_rows")?;
        let xs = self.value(x).data();
        let out = (0..rows)
            .map(|r| Self::row_lse(&xs[r * cols..(r + 1) * cols]))
            .collect();
        self.push(vec![rows, 1], out, Op::LogSumExp(x), &[x])
    }

    /// Smooth GELU stand-in `x * sigmoid(1.702 x)`.
    pub fn quick_gelu(&mut self, x: Var) -> Result<Var> {
        let k = T::of(QUICK_GELU_K);
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| v * sigmoid(k * v))
            .collect();
        let shape = self.value(x).shape().to_vec();
        self.push(shape, data, Op::QuickGelu(x), &[x])
    }

    /// Embedding lookup: row `ids[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, d) = self.mat(table, "gather_rows")?;
        if ids.is_empty() {
            return Err(Error::EmptyInput("gather_rows with no ids".into()));
        }
        let t = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Vocab {
                    id: id as u32,
                    vocab_size: vocab,
                });
            }
            out.extend_from_slice(&t[id * d..(id + 1) * d]);
        }
        self.push(
            vec![ids.len(), d],
            out,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    /// Rectangular sub-matrix copy.
    pub fn block(&mut self, x: Var, rows: Range<usize>, cols: Range<usize>) -> Result<Var> {
        let (r, c) = self.mat(x, "block")?;
        if rows.end > r || cols.end > c || rows.is_empty() || cols.is_empty() {
            return Err(Error::shape(format!(
                "block {rows:?} x {cols:?} outside {r}x{c}"
            )));
        }
        let xs = self.value(x).data();
        let w = cols.len();
        let mut out = Vec::with_capacity(rows.len() * w);
        for i in rows.clone() {
            out.extend_from_slice(&xs[i * c + cols.start..i * c + cols.end]);
        }
        self.push(
            vec![rows.len(), w],
            out,
            Op::Block {
                x,
                r0: rows.start,
                c0: cols.start,
            },
            &[x],
        )
    }

    pub fn rows(&mut self, x: Var, rows: Range<usize>) -> Result<Var> {
        let (_, c) = self.mat(x, "rows")?;
        self.block(x, rows, 0..c)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::EmptyInput("concat_rows".into()))?;
        let (_, c) = self.mat(first, "concat_rows")?;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c2) = self.mat(p, "concat_rows")?;
            if c2 != c {
                return Err(Error::shape("concat_rows column counts differ"));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        self.push(vec![rows, c], out, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::EmptyInput("concat_cols".into()))?;
        let (r, _) = self.mat(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r2, c) = self.mat(p, "concat_cols")?;
            if r2 != r {
                return Err(Error::shape("concat_cols row counts differ"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.push(vec![r, total], out, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Column means, giving `[1 x cols]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.mat(x, "mean_rows")?;
        let xs = self.value(x).data();
        let mut out = vec![T::zero(); c];
        for i in 0..r {
            for j in 0..c {
                out[j] += xs[i * c + j];
            }
        }
        let n = T::of(r as f64);
        for v in out.iter_mut() {
            *v = *v / n;
        }
        self.push(vec![1, c], out, Op::MeanRows(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(vec![1], vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let s = self.sum(x)?;
        self.scale(s, T::one() / T::of(n as f64))
    }

    /// Scales every row to unit L2 norm; a zero row is an error.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.mat(x, "normalize_rows")?;
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(r * c);
        let mut norms = Vec::with_capacity(r);
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if n == T::zero() {
                return Err(Error::DegenerateEmbedding(format!("row {i} has zero norm")));
            }
            norms.push(n);
            out.extend(row.iter().map(|&v| v / n));
        }
        self.push(vec![r, c], out, Op::NormalizeRows { x, norms }, &[x])
    }

    /// Picks flat elements of `x` into a `[1 x idx.len()]` row.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let n = self.value(x).numel();
        if idx.is_empty() {
            return Err(Error::EmptyInput("gather with no indices".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::shape(format!("gather index {bad} outside {n} elements")));
        }
        let xs = self.value(x).data();
        let out = idx.iter().map(|&i| xs[i]).collect();
        self.push(
            vec![1, idx.len()],
            out,
            Op::Gather {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        )
    }

    /// Populates gradients of the scalar `loss` with respect to every
    /// reachable node that requires them. A tape supports one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::contract("backward already ran on this tape"));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[T]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let node = &nodes[i];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.numel()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = nodes[a.0].value.dims2();
                let (_, n) = nodes[b.0].value.dims2();
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                acc(*a, &mut |da| {
                    gemm_into(MatRef::new(g, m, n), MatRef::new(bv, k, n).t(), T::one(), da)
                });
                acc(*b, &mut |db| {
                    gemm_into(MatRef::new(av, m, k).t(), MatRef::new(g, m, n), T::one(), db)
                });
            }
            Op::MatMulT(a, b) => {
                let (m, k) = nodes[a.0].value.dims2();
                let (n, _) = nodes[b.0].value.dims2();
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                acc(*a, &mut |da| {
                    gemm_into(MatRef::new(g, m, n), MatRef::new(bv, n, k), T::one(), da)
                });
                acc(*b, &mut |db| {
                    gemm_into(MatRef::new(g, m, n).t(), MatRef::new(av, m, k), T::one(), db)
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| add_into(db, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| {
                    for (d, &gv) in db.iter_mut().zip(g) {
                        *d -= gv;
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                acc(*a, &mut |da| {
                    for ((d, &gv), &y) in da.iter_mut().zip(g).zip(bv) {
                        *d += gv * y;
                    }
                });
                acc(*b, &mut |db| {
                    for ((d, &gv), &x) in db.iter_mut().zip(g).zip(av) {
                        *d += gv * x;
                    }
                });
            }
            Op::Scale(a, c) => {
                acc(*a, &mut |da| {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv * *c;
                    }
                });
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let (rows, d) = nodes[x.0].value.dims2();
                let xs = nodes[x.0].value.data();
                let gs = nodes[gain.0].value.data();
                let dn = T::of(d as f64);
                acc(*x, &mut |dx| {
                    for r in 0..rows {
                        let inv = inv_rms[r];
                        let row = &xs[r * d..(r + 1) * d];
                        let gr = &g[r * d..(r + 1) * d];
                        let dot: T = (0..d).map(|j| gr[j] * gs[j] * row[j]).sum();
                        let coef = inv * inv * inv * dot / dn;
                        for j in 0..d {
                            dx[r * d + j] += inv * gs[j] * gr[j] - row[j] * coef;
                        }
                    }
                });
                acc(*gain, &mut |dg| {
                    for r in 0..rows {
                        let inv = inv_rms[r];
                        for j in 0..d {
                            dg[j] += g[r * d + j] * xs[r * d + j] * inv;
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let (rows, cols) = node.value.dims2();
                let y = node.value.data();
                acc(*x, &mut |dx| {
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for j in 0..cols {
                            dx[r * cols + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let (rows, cols) = node.value.dims2();
                let y = node.value.data();
                acc(*x, &mut |dx| {
                    for r in 0..rows {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let gsum: T = gr.iter().copied().sum();
                        for j in 0..cols {
                            dx[r * cols + j] += gr[j] - y[r * cols + j].exp() * gsum;
                        }
                    }
                });
            }
            Op::LogSumExp(x) => {
                let (rows, cols) = nodes[x.0].value.dims2();
                let xs = nodes[x.0].value.data();
                let lse = node.value.data();
                acc(*x, &mut |dx| {
                    for r in 0..rows {
                        for j in 0..cols {
                            dx[r * cols + j] += g[r] * (xs[r * cols + j] - lse[r]).exp();
                        }
                    }
                });
            }
            Op::QuickGelu(x) => {
                let xs = nodes[x.0].value.data();
                let k = T::of(QUICK_GELU_K);
                acc(*x, &mut |dx| {
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xs) {
                        let s = sigmoid(k * v);
                        *d += gv * (s + k * v * s * (T::one() - s));
                    }
                });
            }
            Op::GatherRows { table, ids } => {
                let (_, d) = nodes[table.0].value.dims2();
                acc(*table, &mut |dt| {
                    for (i, &id) in ids.iter().enumerate() {
                        add_into(&mut dt[id * d..(id + 1) * d], &g[i * d..(i + 1) * d]);
                    }
                });
            }
            Op::Block { x, r0, c0 } => {
                let (_, c) = nodes[x.0].value.dims2();
                let (h, w) = node.value.dims2();
                acc(*x, &mut |dx| {
                    for i in 0..h {
                        let dst = (r0 + i) * c + c0;
                        add_into(&mut dx[dst..dst + w], &g[i * w..(i + 1) * w]);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = nodes[p.0].value.numel();
                    acc(*p, &mut |dp| add_into(dp, &g[off..off + n]));
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = node.value.dims2();
                let mut c0 = 0;
                for p in parts {
                    let (_, w) = nodes[p.0].value.dims2();
                    acc(*p, &mut |dp| {
                        for i in 0..rows {
                            add_into(
                                &mut dp[i * w..(i + 1) * w],
                                &g[i * total + c0..i * total + c0 + w],
                            );
                        }
                    });
                    c0 += w;
                }
            }
            Op::MeanRows(x) => {
                let (r, c) = nodes[x.0].value.dims2();
                let inv = T::one() / T::of(r as f64);
                acc(*x, &mut |dx| {
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] += g[j] * inv;
                        }
                    }
                });
            }
            Op::Sum(x) => {
                acc(*x, &mut |dx| {
                    for d in dx.iter_mut() {
                        *d += g[0];
                    }
                });
            }
            Op::NormalizeRows { x, norms } => {
                let (r, c) = node.value.dims2();
                let y = node.value.data();
                acc(*x, &mut |dx| {
                    for i in 0..r {
                        let yr = &y[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for j in 0..c {
                            dx[i * c + j] += (gr[j] - yr[j] * dot) / norms[i];
                        }
                    }
                });
            }
            Op::Gather { x, idx } => {
                acc(*x, &mut |dx| {
                    for (k, &i) in idx.iter().enumerate() {
                        dx[i] += g[k];
                    }
                });
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
