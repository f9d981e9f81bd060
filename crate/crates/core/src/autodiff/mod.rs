//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Operations are
//! methods on the tape that take and return [`Var`] handles; each appends one
//! node whose inputs are earlier nodes, so the node list is already in
//! topological order and [`Tape::backward`] is a single reverse sweep.
//!
//! Nodes created with [`Tape::param`] are trainable leaves and nodes created
//! with [`Tape::constant`] are not. An operation is tracked when any of its
//! inputs is, and gradients only flow through tracked nodes.
//!
//! Every operation checks shapes and rejects non-finite results.

mod gradcheck;
mod tensor;

use alloc::vec;
use alloc::vec::Vec;

pub use gradcheck::{
    compare_gradients, gradient_check, CoordinateCheck, GradCheckReport, ERROR_FLOOR,
};
pub use tensor::Tensor;

use crate::graph::{BipartiteGraph, Direction};
use crate::math;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("buffer of length {len} cannot hold a {rows}x{cols} tensor")]
    BufferLength {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("log of non-positive value {0}")]
    LogOfNonPositive(f64),
    #[error("{0} produced a non-finite value")]
    NonFinite(&'static str),
    #[error("loss must be 1x1, got {0}x{1}")]
    NotScalar(usize, usize),
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("{0} needs at least one input")]
    EmptyInput(&'static str),
}

type Result<T> = core::result::Result<T, AutodiffError>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
}

#[derive(Debug, Clone)]
enum Op<'g> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Activate(Var, Activation),
    Exp(Var),
    Log(Var),
    LogSigmoid(Var),
    L2NormalizeRows(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    RowDot(Var, Var),
    Diagonal(Var),
    GatherRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    SumOf(Vec<Var>),
    MeanOf(Vec<Var>),
    ClampMin(Var, f64),
    Spmm(&'g BipartiteGraph, Direction, Var),
}

#[derive(Debug, Clone)]
struct Node<'g> {
    value: Tensor,
    op: Op<'g>,
    tracked: bool,
}

/// Recorded forward pass. Borrowed graphs must outlive the tape.
#[derive(Debug, Default)]
pub struct Tape<'g> {
    nodes: Vec<Node<'g>>,
    params: Vec<Var>,
}

/// Result of [`Tape::backward`]: one optional gradient per tape node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(Var, (usize, usize))>,
}

impl Gradients {
    /// Gradient of a node, `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of every registered parameter, in registration order.
    /// Parameters off the loss path get zeros.
    pub fn params(&self) -> Vec<Tensor> {
        self.params
            .iter()
            .map(|&(v, (r, c))| self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(r, c)))
            .collect()
    }

    pub fn into_params(mut self) -> Vec<Tensor> {
        let params = core::mem::take(&mut self.params);
        params
            .into_iter()
            .map(|(v, (r, c))| {
                self.grads[v.0]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(r, c))
            })
            .collect()
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::ShapeMismatch {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + math::exp(-x))
    } else {
        let e = math::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
fn log_sigmoid(x: f64) -> f64 {
    // min(x, 0) - ln(1 + e^{-|x|})
    x.min(0.0) - math::ln_1p(math::exp(-x.abs()))
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(a) => {
                if x > 0.0 {
                    x
                } else {
                    a * x
                }
            }
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(a) => {
                if x > 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

impl<'g> Tape<'g> {
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

    /// Registers a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        let v = Var(self.nodes.len());
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: true,
        });
        self.params.push(v);
        v
    }

    pub fn params(&self) -> &[Var] {
        &self.params
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        let v = Var(self.nodes.len());
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: false,
        });
        v
    }

    fn push(
        &mut self,
        name: &'static str,
        value: Tensor,
        op: Op<'g>,
        inputs: &[Var],
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite(name));
        }
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        let v = Var(self.nodes.len());
        self.nodes.push(Node { value, op, tracked });
        Ok(v)
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// `a * b`. Adjoint: `dA = G B^T`, `dB = A^T G`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.val(a), self.val(b));
        if x.cols() != y.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: x.shape(),
                rhs: y.shape(),
            });
        }
        let out = x.matmul(y);
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// `a * b^T`. Adjoint: `dA = G B`, `dB = G^T A`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.val(a), self.val(b));
        if x.cols() != y.cols() {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul_nt",
                lhs: x.shape(),
                rhs: y.shape(),
            });
        }
        let out = x.matmul_nt(y);
        self.push("matmul_nt", out, Op::MatMulNt(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("add", self.val(a), self.val(b))?;
        let out = self.val(a).zip_map(self.val(b), |x, y| x + y);
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("sub", self.val(a), self.val(b))?;
        let out = self.val(a).zip_map(self.val(b), |x, y| x - y);
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product. Adjoint: `dA = G * B`, `dB = G * A`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("mul", self.val(a), self.val(b))?;
        let out = self.val(a).zip_map(self.val(b), |x, y| x * y);
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.val(a).scaled(s);
        self.push("scale", out, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.val(a).map(|x| x + s);
        self.push("add_scalar", out, Op::AddScalar(a), &[a])
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Result<Var> {
        let out = self.val(a).map(|x| act.apply(x));
        self.push("activate", out, Op::Activate(a, act), &[a])
    }

    /// Adjoint: `dA = G * exp(A)`.
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).map(math::exp);
        self.push("exp", out, Op::Exp(a), &[a])
    }

    /// Adjoint: `dA = G / A`.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.val(a).as_slice().iter().find(|&&x| x <= 0.0) {
            return Err(AutodiffError::LogOfNonPositive(bad));
        }
        let out = self.val(a).map(math::ln);
        self.push("log", out, Op::Log(a), &[a])
    }

    /// Numerically stable `ln(sigmoid(a))`. Adjoint: `dA = G * sigmoid(-A)`.
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).map(log_sigmoid);
        self.push("log_sigmoid", out, Op::LogSigmoid(a), &[a])
    }

    /// Divides each row by its l2 norm; zero rows stay zero.
    ///
    /// Adjoint per row with `y = x / |x|`: `dx = (g - y <y, g>) / |x|`, and zero
    /// for zero rows.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.val(a);
        let mut out = x.clone();
        for r in 0..x.rows() {
            let norm = math::sqrt(x.row(r).iter().map(|v| v * v).sum());
            if norm > 0.0 {
                for v in out.row_mut(r) {
                    *v /= norm;
                }
            }
        }
        self.push("l2_normalize_rows", out, Op::L2NormalizeRows(a), &[a])
    }

    /// Sum of all entries as 1x1.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.val(a).sum());
        self.push("sum", out, Op::Sum(a), &[a])
    }

    /// Mean of all entries as 1x1.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.val(a);
        if x.as_slice().is_empty() {
            return Err(AutodiffError::EmptyInput("mean"));
        }
        let out = Tensor::scalar(x.sum() / x.as_slice().len() as f64);
        self.push("mean", out, Op::Mean(a), &[a])
    }

    /// Row sums as an `n x 1` column.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let x = self.val(a);
        let out = Tensor::from_fn(x.rows(), 1, |r, _| x.row(r).iter().sum());
        self.push("row_sum", out, Op::RowSum(a), &[a])
    }

    /// Per-row inner products of two equally shaped matrices, `n x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("row_dot", self.val(a), self.val(b))?;
        let (x, y) = (self.val(a), self.val(b));
        let out = Tensor::from_fn(x.rows(), 1, |r, _| {
            x.row(r).iter().zip(y.row(r)).map(|(p, q)| p * q).sum()
        });
        self.push("row_dot", out, Op::RowDot(a, b), &[a, b])
    }

    /// Diagonal of a square matrix as `n x 1`.
    pub fn diagonal(&mut self, a: Var) -> Result<Var> {
        let x = self.val(a);
        if x.rows() != x.cols() {
            return Err(AutodiffError::ShapeMismatch {
                op: "diagonal",
                lhs: x.shape(),
                rhs: (x.cols(), x.rows()),
            });
        }
        let out = Tensor::from_fn(x.rows(), 1, |r, _| x.get(r, r));
        self.push("diagonal", out, Op::Diagonal(a), &[a])
    }

    /// Selects rows (repeats allowed). Adjoint scatter-adds into the source rows.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let x = self.val(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= x.rows()) {
            return Err(AutodiffError::ShapeMismatch {
                op: "gather_rows",
                lhs: x.shape(),
                rhs: (bad, 0),
            });
        }
        let out = x.gather_rows(rows);
        self.push("gather_rows", out, Op::GatherRows(a, rows.to_vec()), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or(AutodiffError::EmptyInput("concat_cols"))?;
        let rows = self.val(*first).rows();
        for p in parts {
            if self.val(*p).rows() != rows {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.val(*first).shape(),
                    rhs: self.val(*p).shape(),
                });
            }
        }
        let cols: usize = parts.iter().map(|p| self.val(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.val(*p).row(r));
            }
        }
        let out = Tensor::new(rows, cols, data)?;
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()), parts)
    }

    fn fold_same(&self, op: &'static str, parts: &[Var]) -> Result<Tensor> {
        let first = parts.first().ok_or(AutodiffError::EmptyInput(op))?;
        let mut acc = self.val(*first).clone();
        for p in &parts[1..] {
            check_same(op, &acc, self.val(*p))?;
            acc.add_assign(self.val(*p));
        }
        Ok(acc)
    }

    pub fn sum_of(&mut self, parts: &[Var]) -> Result<Var> {
        let out = self.fold_same("sum_of", parts)?;
        self.push("sum_of", out, Op::SumOf(parts.to_vec()), parts)
    }

    pub fn mean_of(&mut self, parts: &[Var]) -> Result<Var> {
        let out = self
            .fold_same("mean_of", parts)?
            .scaled(1.0 / parts.len() as f64);
        self.push("mean_of", out, Op::MeanOf(parts.to_vec()), parts)
    }

    /// `max(a, floor)` elementwise. Entries below the floor get zero gradient;
    /// entries at or above it pass the gradient through.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var> {
        let out = self.val(a).map(|x| if x < floor { floor } else { x });
        self.push("clamp_min", out, Op::ClampMin(a, floor), &[a])
    }

    /// Normalized sparse aggregation: `out[r] = sum_c coeff(r, c) * x[c]`.
    ///
    /// Adjoint: `dx = spmm(reverse direction, G)`.
    pub fn spmm(&mut self, g: &'g BipartiteGraph, dir: Direction, x: Var) -> Result<Var> {
        let adj = g.adjacency(dir);
        let xv = self.val(x);
        if xv.rows() != adj.ncols() {
            return Err(AutodiffError::ShapeMismatch {
                op: "spmm",
                lhs: (adj.nrows(), adj.ncols()),
                rhs: xv.shape(),
            });
        }
        let mut out = Tensor::zeros(adj.nrows(), xv.cols());
        adj.spmm_into(xv.as_slice(), xv.cols(), out.as_mut_slice());
        self.push("spmm", out, Op::Spmm(g, dir, x), &[x])
    }

    /// Row-normalized similarity matrix `out[j, k] = <a_j/|a_j|, b_k/|b_k|> / temperature`.
    pub fn cosine_similarity_matrix(&mut self, a: Var, b: Var, temperature: f64) -> Result<Var> {
        if temperature.is_nan() || temperature <= 0.0 {
            return Err(AutodiffError::NonPositiveTemperature(temperature));
        }
        let an = self.l2_normalize_rows(a)?;
        let bn = self.l2_normalize_rows(b)?;
        let s = self.matmul_nt(an, bn)?;
        self.scale(s, 1.0 / temperature)
    }

    /// Reverse sweep from a 1x1 loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.val(loss);
        if lv.shape() != (1, 1) {
            return Err(AutodiffError::NotScalar(lv.rows(), lv.cols()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            params: self
                .params
                .iter()
                .map(|&v| (v, self.val(v).shape()))
                .collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.nodes[v.0].tracked {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&delta),
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node<'g>, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (x, w) = (self.val(*a), self.val(*b));
                if self.nodes[a.0].tracked {
                    self.accumulate(grads, *a, g.matmul_nt(w));
                }
                if self.nodes[b.0].tracked {
                    self.accumulate(grads, *b, x.matmul_tn(g));
                }
            }
            Op::MatMulNt(a, b) => {
                let (x, w) = (self.val(*a), self.val(*b));
                if self.nodes[a.0].tracked {
                    self.accumulate(grads, *a, g.matmul(w));
                }
                if self.nodes[b.0].tracked {
                    self.accumulate(grads, *b, g.matmul_tn(x));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scaled(-1.0));
            }
            Op::Mul(a, b) => {
                let (x, w) = (self.val(*a), self.val(*b));
                self.accumulate(grads, *a, g.zip_map(w, |p, q| p * q));
                self.accumulate(grads, *b, g.zip_map(x, |p, q| p * q));
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scaled(*s)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Activate(a, act) => {
                let x = self.val(*a);
                let mut d = x.zip_map(y, |xi, yi| act.derivative(xi, yi));
                for (di, gi) in d.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *di *= gi;
                }
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => self.accumulate(grads, *a, g.zip_map(y, |p, q| p * q)),
            Op::Log(a) => {
                let x = self.val(*a);
                self.accumulate(grads, *a, g.zip_map(x, |p, q| p / q));
            }
            Op::LogSigmoid(a) => {
                let x = self.val(*a);
                self.accumulate(grads, *a, g.zip_map(x, |p, q| p * sigmoid(-q)));
            }
            Op::L2NormalizeRows(a) => {
                let x = self.val(*a);
                let mut d = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let norm = math::sqrt(x.row(r).iter().map(|v| v * v).sum());
                    if norm == 0.0 {
                        continue;
                    }
                    let (yr, gr) = (y.row(r), g.row(r));
                    let proj: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for ((dst, &yi), &gi) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *dst = (gi - yi * proj) / norm;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let (r, c) = self.val(*a).shape();
                self.accumulate(grads, *a, Tensor::full(r, c, g.item()));
            }
            Op::Mean(a) => {
                let (r, c) = self.val(*a).shape();
                self.accumulate(grads, *a, Tensor::full(r, c, g.item() / (r * c) as f64));
            }
            Op::RowSum(a) => {
                let (r, c) = self.val(*a).shape();
                self.accumulate(grads, *a, Tensor::from_fn(r, c, |i, _| g.get(i, 0)));
            }
            Op::RowDot(a, b) => {
                let (x, w) = (self.val(*a), self.val(*b));
                let (r, c) = x.shape();
                self.accumulate(
                    grads,
                    *a,
                    Tensor::from_fn(r, c, |i, j| g.get(i, 0) * w.get(i, j)),
                );
                self.accumulate(
                    grads,
                    *b,
                    Tensor::from_fn(r, c, |i, j| g.get(i, 0) * x.get(i, j)),
                );
            }
            Op::Diagonal(a) => {
                let n = self.val(*a).rows();
                let d = Tensor::from_fn(n, n, |i, j| if i == j { g.get(i, 0) } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::GatherRows(a, rows) => {
                let (r, c) = self.val(*a).shape();
                let mut d = Tensor::zeros(r, c);
                for (k, &src) in rows.iter().enumerate() {
                    for (dst, gi) in d.row_mut(src).iter_mut().zip(g.row(k)) {
                        *dst += gi;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (r, c) = self.val(*p).shape();
                    let d = Tensor::from_fn(r, c, |i, j| g.get(i, offset + j));
                    offset += c;
                    self.accumulate(grads, *p, d);
                }
            }
            Op::SumOf(parts) => {
                for p in parts {
                    self.accumulate(grads, *p, g.clone());
                }
            }
            Op::MeanOf(parts) => {
                let s = 1.0 / parts.len() as f64;
                for p in parts {
                    self.accumulate(grads, *p, g.scaled(s));
                }
            }
            Op::ClampMin(a, floor) => {
                let x = self.val(*a);
                let d = g.zip_map(x, |gi, xi| if xi < *floor { 0.0 } else { gi });
                self.accumulate(grads, *a, d);
            }
            Op::Spmm(graph, dir, x) => {
                let adj = graph.adjacency(dir.reverse());
                let mut d = Tensor::zeros(adj.nrows(), g.cols());
                adj.spmm_into(g.as_slice(), g.cols(), d.as_mut_slice());
                self.accumulate(grads, *x, d);
            }
        }
    }
}
