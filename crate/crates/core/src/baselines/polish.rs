//! Hard dose bounds on a subvolume chosen from an approximate plan.

use serde::{Deserialize, Serialize};

use super::{objective_p1, BaselineError};
use crate::model::{ConstraintId, Direction, ProblemSpec};
use crate::projection::ascending_order;
use crate::quadprog::{solve_constrained_ls, AdmmOptions, BoxLinearConstraints, QpError, QuadraticObjective, Term};
use crate::report::check_constraints;

/// Voxels of one constraint that receive a hard bound at `dose`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subvolume {
    pub id: ConstraintId,
    pub direction: Direction,
    pub dose: f64,
    pub voxels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolishOptions {
    pub admm: AdmmOptions,
    /// Relative tightening of the hard bounds passed to the solver, so that
    /// the returned plan meets the original bounds despite solver tolerance.
    pub margin: f64,
}

impl Default for PolishOptions {
    fn default() -> Self {
        Self {
            admm: AdmmOptions::default(),
            margin: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolishOutcome {
    pub x: Vec<f64>,
    pub objective_p1: f64,
    pub subvolumes: Vec<Subvolume>,
    pub iterations: usize,
    /// The starting plan already met the bounds and was not improved on.
    pub kept_start: bool,
}

/// Upper constraints bound their `n - cap` lowest-dose voxels, lower ones
/// their `n - cap` highest. Ties go to the lower index.
pub fn select_subvolumes(problem: &ProblemSpec, x: &[f64]) -> Vec<Subvolume> {
    problem
        .constraint_ids()
        .into_iter()
        .map(|id| {
            let c = problem.constraint(id);
            let dose = problem.dose(id.structure, x);
            let n = dose.len();
            let keep = n - c.cap(n).min(n);
            let voxels = match c.direction {
                Direction::Upper => ascending_order(&dose)[..keep].to_vec(),
                Direction::Lower => {
                    let neg: Vec<f64> = dose.iter().map(|v| -v).collect();
                    ascending_order(&neg)[..keep].to_vec()
                }
            };
            Subvolume {
                id,
                direction: c.direction,
                dose: c.dose,
                voxels,
            }
        })
        .collect()
}

fn bounds(problem: &ProblemSpec, subs: &[Subvolume], margin: f64) -> BoxLinearConstraints {
    let mut cons = BoxLinearConstraints::new();
    for s in subs {
        let a = problem.structure(s.id.structure).1;
        for &i in &s.voxels {
            let row: Vec<(usize, f64)> = a.row(i).collect();
            match s.direction {
                Direction::Upper => cons.push(row, s.dose * (1.0 - margin)),
                Direction::Lower => cons.push(row.into_iter().map(|(j, v)| (j, -v)).collect(), -s.dose * (1.0 + margin)),
            }
        }
    }
    cons
}

/// Worst violation of each subvolume's original bound at `x`.
fn residuals(problem: &ProblemSpec, subs: &[Subvolume], x: &[f64]) -> Vec<f64> {
    subs.iter()
        .map(|s| {
            let dose = problem.dose(s.id.structure, x);
            s.voxels
                .iter()
                .map(|&i| match s.direction {
                    Direction::Upper => dose[i] - s.dose,
                    Direction::Lower => s.dose - dose[i],
                })
                .fold(0.0, f64::max)
        })
        .collect()
}

pub fn polish(problem: &ProblemSpec, x_approx: &[f64], opts: &PolishOptions) -> Result<PolishOutcome, BaselineError> {
    if x_approx.len() != problem.beamlets {
        return Err(BaselineError::InvalidInput(format!(
            "fluence has length {}, expected {}",
            x_approx.len(),
            problem.beamlets
        )));
    }
    if let Some(i) = x_approx.iter().position(|&v| !(v >= 0.0)) {
        return Err(BaselineError::InvalidInput(format!("x[{i}] = {} is negative", x_approx[i])));
    }
    let subvolumes = select_subvolumes(problem, x_approx);
    let cons = bounds(problem, &subvolumes, opts.margin);
    let mut obj = QuadraticObjective::new(problem.beamlets, problem.lambda);
    for t in &problem.targets {
        obj.terms.push(Term::new(
            t.objective.alpha / t.structure.voxel_count as f64,
            &t.matrix,
            t.objective.dose.clone(),
        ));
    }

    let result = match solve_constrained_ls(&obj, &cons, Some(x_approx), &opts.admm) {
        Ok(r) => r,
        Err(QpError::Infeasible { last_x, .. }) => {
            return Err(BaselineError::Infeasible {
                residuals: residuals(problem, &subvolumes, &last_x),
                x: last_x,
            })
        }
        Err(e) => return Err(e.into()),
    };
    let start_ok = residuals(problem, &subvolumes, x_approx).iter().all(|&r| r <= 0.0);
    let start_value = objective_p1(problem, x_approx);
    let value = objective_p1(problem, &result.x);
    let (x, value, kept_start) = if start_ok && start_value < value {
        (x_approx.to_vec(), start_value, true)
    } else {
        (result.x, value, false)
    };
    if !check_constraints(problem, &x).iter().all(|c| c.satisfied) {
        return Err(BaselineError::Infeasible {
            residuals: residuals(problem, &subvolumes, &x),
            x,
        });
    }
    Ok(PolishOutcome {
        x,
        objective_p1: value,
        subvolumes,
        iterations: result.iters,
        kept_start,
    })
}
