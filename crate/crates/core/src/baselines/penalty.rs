//! Dose reassignment with a one-sided quadratic penalty.
//!
//! Every iteration re-sorts each constrained structure's dose, gives the
//! `cap` most permissive voxels a sentinel threshold that switches their
//! penalty off, and takes one projected gradient step on
//! `sum a/(2n) ||(A x - d~)_+||^2` plus the target terms and ridge.

use serde::{Deserialize, Serialize};

use super::{BaselineError, BaselineOutcome};
use crate::model::{Direction, ProblemSpec};
use crate::projection::ascending_order;
use crate::quadprog::{lipschitz_upper_bound, QuadraticObjective, Term};
use crate::report::{check_constraints, SolveStatus, TraceRow};
use crate::solver::Solver;

/// Threshold assigned to voxels allowed to violate.
pub const SENTINEL_DOSE: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    /// Gradient step; `1/L` of the fully active quadratic when absent.
    pub step: Option<f64>,
    pub max_iters: usize,
    /// Stop when the assignment is unchanged and `||dx|| <= tol`.
    pub tol: f64,
    pub seed: u64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            step: None,
            max_iters: 20_000,
            tol: 1e-4,
            seed: 0,
        }
    }
}

/// Per-voxel thresholds for one constraint given the current dose. Upper:
/// the `cap` highest doses get [`SENTINEL_DOSE`]; lower: the `cap` lowest
/// get its negative.
pub fn assign_thresholds(dose: &[f64], direction: Direction, level: f64, cap: usize) -> Vec<f64> {
    let n = dose.len();
    let order = ascending_order(dose);
    let mut out = vec![level; n];
    match direction {
        Direction::Upper => order[n - cap.min(n)..].iter().for_each(|&i| out[i] = SENTINEL_DOSE),
        Direction::Lower => order[..cap.min(n)].iter().for_each(|&i| out[i] = -SENTINEL_DOSE),
    }
    out
}

struct Penalized<'p> {
    problem: &'p ProblemSpec,
    ids: Vec<crate::model::ConstraintId>,
}

impl Penalized<'_> {
    fn thresholds(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.ids
            .iter()
            .map(|&id| {
                let c = self.problem.constraint(id);
                let n = self.problem.structure(id.structure).0.voxel_count;
                assign_thresholds(&self.problem.dose(id.structure, x), c.direction, c.dose, c.cap(n))
            })
            .collect()
    }

    /// Objective value and gradient for fixed thresholds.
    fn value_and_grad(&self, x: &[f64], thresholds: &[Vec<f64>], grad: &mut [f64]) -> f64 {
        let p = self.problem;
        grad.iter_mut().zip(x).for_each(|(g, xi)| *g = p.lambda * xi);
        let mut total = 0.5 * p.lambda * x.iter().map(|v| v * v).sum::<f64>();
        for t in &p.targets {
            let w = t.objective.alpha / t.structure.voxel_count as f64;
            let r: Vec<f64> = t
                .matrix
                .mul_vec(x)
                .iter()
                .zip(&t.objective.dose)
                .map(|(a, b)| a - b)
                .collect();
            total += 0.5 * w * r.iter().map(|v| v * v).sum::<f64>();
            t.matrix.tr_mul_add(&r, w, grad);
        }
        for (&id, th) in self.ids.iter().zip(thresholds) {
            let c = p.constraint(id);
            let (s, a) = p.structure(id.structure);
            let w = c.alpha / s.voxel_count as f64;
            let dose = a.mul_vec(x);
            // Hinge residual, signed so that the gradient is `w A^T r`.
            let r: Vec<f64> = match c.direction {
                Direction::Upper => dose.iter().zip(th).map(|(v, t)| (v - t).max(0.0)).collect(),
                Direction::Lower => dose.iter().zip(th).map(|(v, t)| -(t - v).max(0.0)).collect(),
            };
            total += 0.5 * w * r.iter().map(|v| v * v).sum::<f64>();
            a.tr_mul_add(&r, w, grad);
        }
        total
    }
}

pub fn solve_penalty_iterative(problem: &ProblemSpec, cfg: &PenaltyConfig) -> Result<BaselineOutcome, BaselineError> {
    if !(cfg.tol > 0.0) {
        return Err(BaselineError::InvalidInput("tol must be positive".into()));
    }
    let pen = Penalized {
        problem,
        ids: problem.constraint_ids(),
    };
    let solver = Solver::new(problem, Default::default())?;
    let mut x = solver.unconstrained_fluence()?.x;
    let step = match cfg.step {
        Some(s) if s > 0.0 => s,
        Some(s) => return Err(BaselineError::InvalidInput(format!("step {s} must be positive"))),
        None => {
            let mut full: QuadraticObjective = solver.target_objective();
            for &id in &pen.ids {
                let (s, a) = problem.structure(id.structure);
                let w = problem.constraint(id).alpha / s.voxel_count as f64;
                full.terms.push(Term::new(w, a, vec![0.0; s.voxel_count]));
            }
            1.0 / lipschitz_upper_bound(&full, cfg.seed)
        }
    };

    let m = x.len();
    let mut grad = vec![0.0; m];
    let mut thresholds = pen.thresholds(&x);
    let mut history = vec![pen.value_and_grad(&x, &thresholds, &mut grad)];
    let mut trace = vec![trace_row(problem, 0, history[0], f64::INFINITY, &x)];
    let mut status = SolveStatus::MaxItersExceeded;
    let mut iterations = 0;
    for k in 1..=cfg.max_iters {
        iterations = k;
        pen.value_and_grad(&x, &thresholds, &mut grad);
        let x_new: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| (xi - step * gi).max(0.0)).collect();
        let dx = x_new
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        x = x_new;
        let new_thresholds = pen.thresholds(&x);
        let stable = new_thresholds == thresholds;
        thresholds = new_thresholds;
        let value = pen.value_and_grad(&x, &thresholds, &mut grad);
        if !value.is_finite() {
            return Err(BaselineError::InvalidInput(format!("non-finite objective at iteration {k}")));
        }
        history.push(value);
        trace.push(trace_row(problem, k, value, dx, &x));
        if stable && dx <= cfg.tol {
            status = SolveStatus::Converged;
            break;
        }
    }
    Ok(BaselineOutcome {
        x,
        status,
        iterations,
        history,
        trace,
        y_history: Vec::new(),
    })
}

fn trace_row(problem: &ProblemSpec, k: usize, g: f64, err: f64, x: &[f64]) -> TraceRow {
    TraceRow {
        k,
        g,
        err: err.is_finite().then_some(err),
        violations: check_constraints(problem, x).iter().map(|c| c.violation_count).collect(),
    }
}
