//! Strongly convex quadratics and their solvers.
//!
//! An objective is a sum of weighted least-squares terms over a stacked
//! variable plus a ridge on a leading segment of it:
//!
//! ```text
//! phi(x) = sum_k c_k/2 ||B_k x - b_k||^2 + lambda/2 ||x[..r]||^2
//! ```
//!
//! Each `B_k` is a horizontal concatenation of sparse dose matrices and signed
//! identity blocks, which covers both the fluence subproblem and the stacked
//! fluence/slack subproblem.

mod admm;
mod nnls;

pub use admm::{solve_constrained_ls, AdmmOptions, BoxLinearConstraints, ConstrainedLsResult};
pub use nnls::{solve_nnls, NnlsOptions, NnlsResult};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::matrix::DoseMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("non-finite value encountered after {iters} iterations")]
    NonFiniteValue { iters: usize },
    #[error("iteration limit {max_iters} reached (residual {residual:e})")]
    MaxItersExceeded { max_iters: usize, residual: f64 },
    #[error("constraints are infeasible (primal residual {primal_residual:e})")]
    Infeasible { primal_residual: f64, last_x: Vec<f64> },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy)]
pub enum Operator<'a> {
    Sparse(&'a DoseMatrix),
    /// `sign * I` of size `len`.
    Identity { len: usize, sign: f64 },
}

impl Operator<'_> {
    pub fn rows(&self) -> usize {
        match self {
            Operator::Sparse(a) => a.rows(),
            Operator::Identity { len, .. } => *len,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Operator::Sparse(a) => a.cols(),
            Operator::Identity { len, .. } => *len,
        }
    }

    fn mul_add(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Operator::Sparse(a) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o += a.row(i).map(|(j, v)| v * x[j]).sum::<f64>();
                }
            }
            Operator::Identity { sign, .. } => {
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o += sign * xi;
                }
            }
        }
    }

    fn tr_mul_add(&self, y: &[f64], scale: f64, out: &mut [f64]) {
        match self {
            Operator::Sparse(a) => a.tr_mul_add(y, scale, out),
            Operator::Identity { sign, .. } => {
                for (o, &yi) in out.iter_mut().zip(y) {
                    *o += scale * sign * yi;
                }
            }
        }
    }

    fn row_entries(&self, i: usize, offset: usize, out: &mut Vec<(usize, f64)>) {
        match self {
            Operator::Sparse(a) => out.extend(a.row(i).map(|(j, v)| (offset + j, v))),
            Operator::Identity { sign, .. } => out.push((offset + i, *sign)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Term<'a> {
    pub weight: f64,
    /// `(column offset, operator)` pairs placed side by side.
    pub blocks: Vec<(usize, Operator<'a>)>,
    pub target: Vec<f64>,
}

impl<'a> Term<'a> {
    pub fn new(weight: f64, a: &'a DoseMatrix, target: Vec<f64>) -> Self {
        Self {
            weight,
            blocks: vec![(0, Operator::Sparse(a))],
            target,
        }
    }

    pub fn rows(&self) -> usize {
        self.target.len()
    }

    /// `out = B x`
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (off, op) in &self.blocks {
            op.mul_add(&x[*off..*off + op.cols()], out);
        }
    }

    /// `out += scale * B^T y`
    pub fn apply_tr_add(&self, y: &[f64], scale: f64, out: &mut [f64]) {
        for (off, op) in &self.blocks {
            op.tr_mul_add(y, scale, &mut out[*off..*off + op.cols()]);
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticObjective<'a> {
    pub terms: Vec<Term<'a>>,
    pub ridge: f64,
    /// The ridge applies to `x[..ridge_len]`.
    pub ridge_len: usize,
    pub dim: usize,
}

impl<'a> QuadraticObjective<'a> {
    pub fn new(dim: usize, ridge: f64) -> Self {
        Self {
            terms: Vec::new(),
            ridge,
            ridge_len: dim,
            dim,
        }
    }

    pub fn with_term(mut self, term: Term<'a>) -> Self {
        self.terms.push(term);
        self
    }

    pub fn check(&self) -> Result<(), QpError> {
        if self.ridge_len > self.dim {
            return Err(QpError::InvalidInput("ridge segment longer than dimension".into()));
        }
        for (k, t) in self.terms.iter().enumerate() {
            if !(t.weight > 0.0) {
                return Err(QpError::InvalidInput(format!("term {k} has weight {}", t.weight)));
            }
            for (off, op) in &t.blocks {
                if op.rows() != t.rows() || off + op.cols() > self.dim {
                    return Err(QpError::InvalidInput(format!("term {k} block shape mismatch")));
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut total = 0.5 * self.ridge * x[..self.ridge_len].iter().map(|v| v * v).sum::<f64>();
        for t in &self.terms {
            let mut r = vec![0.0; t.rows()];
            t.apply(x, &mut r);
            total += 0.5 * t.weight * r.iter().zip(&t.target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        total
    }

    /// Returns the value and writes the gradient into `grad`.
    pub fn value_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        for i in 0..self.ridge_len {
            grad[i] = self.ridge * x[i];
            total += 0.5 * self.ridge * x[i] * x[i];
        }
        for t in &self.terms {
            let mut r = vec![0.0; t.rows()];
            t.apply(x, &mut r);
            for (ri, bi) in r.iter_mut().zip(&t.target) {
                *ri -= bi;
            }
            total += 0.5 * t.weight * r.iter().map(|v| v * v).sum::<f64>();
            t.apply_tr_add(&r, t.weight, grad);
        }
        total
    }

    /// `out = H v`
    pub fn hess_vec(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..self.ridge_len {
            out[i] = self.ridge * v[i];
        }
        for t in &self.terms {
            let mut r = vec![0.0; t.rows()];
            t.apply(v, &mut r);
            t.apply_tr_add(&r, t.weight, out);
        }
    }

    /// Dense `(H, q, c)` with `phi(x) = x^T H x / 2 + q^T x + c`.
    pub fn dense_quadratic(&self) -> (DMatrix<f64>, DVector<f64>, f64) {
        let n = self.dim;
        let mut h = DMatrix::zeros(n, n);
        let mut q = DVector::zeros(n);
        let mut c = 0.0;
        for i in 0..self.ridge_len {
            h[(i, i)] += self.ridge;
        }
        let mut row = Vec::new();
        for t in &self.terms {
            for (i, &b) in t.target.iter().enumerate() {
                row.clear();
                for (off, op) in &t.blocks {
                    op.row_entries(i, *off, &mut row);
                }
                for &(j, vj) in &row {
                    q[j] -= t.weight * b * vj;
                    for &(l, vl) in &row {
                        h[(j, l)] += t.weight * vj * vl;
                    }
                }
                c += 0.5 * t.weight * b * b;
            }
        }
        (h, q, c)
    }
}

/// Upper bound on the largest Hessian eigenvalue: power iteration from a
/// seeded random start, inflated by 5%.
pub fn lipschitz_upper_bound(obj: &QuadraticObjective, seed: u64) -> f64 {
    let n = obj.dim;
    if n == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    normalize(&mut v);
    let mut hv = vec![0.0; n];
    let mut estimate = 0.0;
    for _ in 0..1000 {
        obj.hess_vec(&v, &mut hv);
        let norm = hv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        let rayleigh: f64 = v.iter().zip(&hv).map(|(a, b)| a * b).sum();
        for (vi, &h) in v.iter_mut().zip(&hv) {
            *vi = h / norm;
        }
        let done = (norm - estimate).abs() <= 1e-12 * norm && (norm - rayleigh).abs() <= 1e-9 * norm;
        estimate = norm;
        if done {
            break;
        }
    }
    1.05 * estimate
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `||min(x, grad)||_inf`, the complementarity residual for `x >= 0`.
pub fn kkt_residual(x: &[f64], grad: &[f64]) -> f64 {
    x.iter().zip(grad).map(|(&xi, &gi)| xi.min(gi).abs()).fold(0.0, f64::max)
}
