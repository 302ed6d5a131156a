//! Define-by-run reverse-mode differentiation over whole matrices.
//!
//! A [`Tape`] records every operation in creation order, so node inputs always
//! precede the node and a single reverse sweep over the node list is a valid
//! reverse topological order. Tapes are rebuilt for every minibatch.

use std::collections::VecDeque;

use super::Matrix;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    StopGradient,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Tanh(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    RowLogSumExp(Var),
    HCat(Vec<Var>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::StopGradient => "stop_gradient",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Square(_) => "square",
            Op::Clamp(..) => "clamp",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::RowSum(_) => "row_sum",
            Op::RowLogSumExp(_) => "row_logsumexp",
            Op::HCat(_) => "hcat",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    frozen: Option<VecDeque<Matrix>>,
}

/// Gradients of a scalar loss with respect to every node of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; an all-zero matrix when no path reaches the loss.
    pub fn get(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    /// `true` when some nonzero derivative flowed into `v`.
    pub fn reached(&self, v: Var) -> bool {
        self.grads[v.0]
            .as_ref()
            .is_some_and(|g| g.as_slice().iter().any(|&x| x != 0.0))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose stop-gradient nodes replay `values` in order instead of
    /// copying their inputs. Re-running a graph at perturbed parameters on it
    /// evaluates the surrogate that [`Tape::backward`] differentiates.
    pub fn with_frozen_stops(values: Vec<Matrix>) -> Self {
        Self {
            nodes: Vec::new(),
            frozen: Some(values.into()),
        }
    }

    /// Values of every stop-gradient node, in creation order.
    pub fn stopped_values(&self) -> Vec<Matrix> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::StopGradient))
            .map(|n| n.value.clone())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.as_slice()[0]
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Result<Var> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, value: Matrix) -> Result<Var> {
        self.push(value, Op::Leaf, false)
    }

    /// Identity on the forward pass; blocks all gradient on the backward pass.
    pub fn stop_gradient(&mut self, x: Var) -> Result<Var> {
        let value = match self.frozen.as_mut() {
            Some(q) => {
                let v = q.pop_front().ok_or_else(|| {
                    Error::Contract("frozen stop-gradient values exhausted".into())
                })?;
                let (r, c) = self.nodes[x.0].value.shape();
                if v.shape() != (r, c) {
                    return Err(Error::dim(
                        "stop_gradient",
                        format!("{r}x{c}"),
                        format!("{}x{}", v.rows(), v.cols()),
                    ));
                }
                v
            }
            None => self.value(x).clone(),
        };
        self.push(value, Op::StopGradient, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Add(a, b), rg)
    }

    /// Adds a `1 x m` row vector to every row of an `n x m` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (am, rm) = (self.value(a), self.value(row));
        if rm.rows() != 1 || rm.cols() != am.cols() {
            return Err(Error::dim(
                "add_row",
                format!("1x{}", am.cols()),
                format!("{}x{}", rm.rows(), rm.cols()),
            ));
        }
        let mut value = am.clone();
        for r in 0..value.rows() {
            for (o, b) in value.row_mut(r).iter_mut().zip(rm.as_slice()) {
                *o += b;
            }
        }
        let rg = self.rg(&[a, row]);
        self.push(value, Op::AddRow(a, row), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Sub(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let value = self.value(a).scale(k);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, k), rg)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        let value = self.value(a).map(|v| v + k);
        let rg = self.rg(&[a]);
        self.push(value, Op::AddScalar(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::exp);
        let rg = self.rg(&[a]);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::ln);
        let rg = self.rg(&[a]);
        self.push(value, Op::Log(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::tanh);
        let rg = self.rg(&[a]);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|v| v * v);
        let rg = self.rg(&[a]);
        self.push(value, Op::Square(a), rg)
    }

    /// Clamp into `[lo, hi]`; the derivative is zero where the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let value = self.value(a).map(|v| v.clamp(lo, hi));
        let rg = self.rg(&[a]);
        self.push(value, Op::Clamp(a, lo, hi), rg)
    }

    /// Sum of all entries, as `1 x 1`.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    /// Mean of all entries, as `1 x 1`.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let value = Matrix::scalar(self.value(a).mean());
        let rg = self.rg(&[a]);
        self.push(value, Op::Mean(a), rg)
    }

    /// Per-row sum, `n x m -> n x 1`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).sum_cols();
        let rg = self.rg(&[a]);
        self.push(value, Op::RowSum(a), rg)
    }

    /// Per-row log-sum-exp, `n x m -> n x 1`, with max subtraction.
    pub fn row_logsumexp(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let out = (0..m.rows())
            .map(|r| {
                let row = m.row(r);
                let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
            })
            .collect();
        let rg = self.rg(&[a]);
        self.push(Matrix::column_vector(out), Op::RowLogSumExp(a), rg)
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn hcat(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Matrix::hcat(&mats)?;
        let rg = self.rg(parts);
        self.push(value, Op::HCat(parts.to_vec()), rg)
    }

    /// Reverse sweep from a `1 x 1` loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for id in (0..n).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let mut contribs: Vec<(Var, Matrix)> = Vec::with_capacity(2);
            match &node.op {
                Op::Leaf | Op::StopGradient => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.requires_grad(*a) {
                        contribs.push((*a, g.matmul_t(self.value(*b))?));
                    }
                    if self.requires_grad(*b) {
                        contribs.push((*b, self.value(*a).t_matmul(&g)?));
                    }
                }
                Op::Add(a, b) => {
                    contribs.push((*a, g.clone()));
                    contribs.push((*b, g));
                }
                Op::AddRow(a, row) => {
                    contribs.push((*row, g.sum_rows()));
                    contribs.push((*a, g));
                }
                Op::Sub(a, b) => {
                    contribs.push((*b, g.scale(-1.0)));
                    contribs.push((*a, g));
                }
                Op::Mul(a, b) => {
                    if self.requires_grad(*a) {
                        contribs.push((*a, g.hadamard(self.value(*b))?));
                    }
                    if self.requires_grad(*b) {
                        contribs.push((*b, g.hadamard(self.value(*a))?));
                    }
                }
                Op::Scale(a, k) => contribs.push((*a, g.scale(*k))),
                Op::AddScalar(a) => contribs.push((*a, g)),
                Op::Exp(a) => contribs.push((*a, g.hadamard(&node.value)?)),
                Op::Log(a) => contribs.push((*a, g.zip_map(self.value(*a), "log", |g, x| g / x)?)),
                Op::Relu(a) => contribs.push((
                    *a,
                    g.zip_map(self.value(*a), "relu", |g, x| if x > 0.0 { g } else { 0.0 })?,
                )),
                Op::Tanh(a) => contribs.push((
                    *a,
                    g.zip_map(&node.value, "tanh", |g, y| g * (1.0 - y * y))?,
                )),
                Op::Square(a) => {
                    contribs.push((*a, g.zip_map(self.value(*a), "square", |g, x| 2.0 * g * x)?))
                }
                Op::Clamp(a, lo, hi) => contribs.push((
                    *a,
                    g.zip_map(self.value(*a), "clamp", |g, x| {
                        if x >= *lo && x <= *hi {
                            g
                        } else {
                            0.0
                        }
                    })?,
                )),
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    contribs.push((*a, Matrix::filled(r, c, g.as_slice()[0])));
                }
                Op::Mean(a) => {
                    let (r, c) = self.shape(*a);
                    contribs.push((*a, Matrix::filled(r, c, g.as_slice()[0] / (r * c) as f64)));
                }
                Op::RowSum(a) => {
                    let (r, c) = self.shape(*a);
                    contribs.push((*a, Matrix::from_fn(r, c, |i, _| g.get(i, 0))));
                }
                Op::RowLogSumExp(a) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let dx = Matrix::from_fn(x.rows(), x.cols(), |i, j| {
                        g.get(i, 0) * (x.get(i, j) - y.get(i, 0)).exp()
                    });
                    contribs.push((*a, dx));
                }
                Op::HCat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        let slice = Matrix::from_fn(r, c, |i, j| g.get(i, offset + j));
                        offset += c;
                        contribs.push((p, slice));
                    }
                }
            }
            for (v, d) in contribs {
                if !self.requires_grad(v) {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&d),
                    slot @ None => *slot = Some(d),
                }
            }
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient_at_three() {
        let mut t = Tape::new();
        let x = t.param(Matrix::scalar(3.0)).unwrap();
        let y = t.square(x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).as_slice(), &[6.0]);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let mut t = Tape::new();
        let x = t.param(Matrix::scalar(1.7)).unwrap();
        let y = t.add(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).as_slice(), &[2.0]);
    }

    #[test]
    fn stop_gradient_is_forward_transparent_backward_opaque() {
        let mut t = Tape::new();
        let xm = Matrix::from_rows(&[vec![0.1, -2.5], vec![3.25, 1e-9]]).unwrap();
        let ym = Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
        let x = t.param(xm.clone()).unwrap();
        let y = t.param(ym).unwrap();
        let sx = t.stop_gradient(x).unwrap();
        assert_eq!(t.value(sx), &xm);
        let p = t.mul(sx, y).unwrap();
        let l = t.sum(p).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x), Matrix::zeros(2, 2));
        assert!(!g.reached(x));
        assert_eq!(g.get(y), xm);
    }

    #[test]
    fn unrelated_leaf_gets_zero() {
        let mut t = Tape::new();
        let x = t.param(Matrix::scalar(2.0)).unwrap();
        let unused = t.param(Matrix::filled(2, 3, 1.0)).unwrap();
        let l = t.exp(x).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(unused), Matrix::zeros(2, 3));
    }

    #[test]
    fn exp_of_zero_is_ones() {
        let mut t = Tape::new();
        let z = t.constant(Matrix::zeros(2, 3)).unwrap();
        let e = t.exp(z).unwrap();
        assert_eq!(t.value(e), &Matrix::filled(2, 3, 1.0));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.param(Matrix::zeros(2, 1)).unwrap();
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn log_of_zero_is_numeric_error() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::zeros(1, 2)).unwrap();
        assert!(matches!(t.log(x), Err(Error::NonFinite { op: "log" })));
    }

    #[test]
    fn add_row_rejects_bad_bias() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::zeros(3, 2)).unwrap();
        let b = t.constant(Matrix::zeros(1, 3)).unwrap();
        assert!(matches!(t.add_row(a, b), Err(Error::Dim { .. })));
    }
}
