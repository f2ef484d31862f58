//! Comparison methods: iterative dose reassignment with a one-sided penalty,
//! slack variables with greedy monotone dose targets, and polishing with hard
//! dose bounds on a chosen subvolume.

mod penalty;
mod polish;
mod slack;

pub use penalty::{solve_penalty_iterative, PenaltyConfig};
pub use polish::{polish, select_subvolumes, PolishOptions, PolishOutcome, Subvolume};
pub use slack::{project_monotone_upper, solve_slack_greedy};

use thiserror::Error;

use crate::model::ProblemSpec;
use crate::quadprog::QpError;
use crate::report::{SolveStatus, TraceRow};
use crate::solver::SolverError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("hard dose bounds are infeasible; worst residual per constraint: {residuals:?}")]
    Infeasible { residuals: Vec<f64>, x: Vec<f64> },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOutcome {
    pub x: Vec<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Objective of the method at every iterate.
    pub history: Vec<f64>,
    pub trace: Vec<TraceRow>,
    /// Dose targets per iteration and block (slack-greedy only).
    pub y_history: Vec<Vec<Vec<f64>>>,
}

/// Target terms plus ridge, the idealized objective without dose-volume
/// terms.
pub fn objective_p1(problem: &ProblemSpec, x: &[f64]) -> f64 {
    let mut total = 0.5 * problem.lambda * x.iter().map(|v| v * v).sum::<f64>();
    for t in &problem.targets {
        let dose = t.matrix.mul_vec(x);
        let sq: f64 = dose
            .iter()
            .zip(&t.objective.dose)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        total += t.objective.alpha / (2.0 * t.structure.voxel_count as f64) * sq;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::DoseMatrix;
    use crate::model::{StructureKind, StructureSpec, Target, TargetObjective};
    use crate::solver::{Solver, SolverConfig};

    fn two_voxel() -> ProblemSpec {
        ProblemSpec::new(
            vec![Target {
                structure: StructureSpec::new("PTV", StructureKind::Ptv, 2),
                matrix: DoseMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
                objective: TargetObjective {
                    dose: vec![60.0, 80.0],
                    alpha: 2.0,
                },
                constraints: vec![],
            }],
            vec![],
            1e-12,
        )
        .unwrap()
    }

    #[test]
    fn exact_fit_is_near_zero() {
        assert!(objective_p1(&two_voxel(), &[60.0, 80.0]) < 1e-8);
    }

    #[test]
    fn zero_fluence_closed_form() {
        let v = objective_p1(&two_voxel(), &[0.0, 0.0]);
        assert!((v - 2.0 / 4.0 * (3600.0 + 6400.0)).abs() < 1e-9);
    }

    #[test]
    fn matches_target_terms_of_relaxed_objective() {
        let p = two_voxel();
        let s = Solver::new(&p, SolverConfig::default()).unwrap();
        let x = [12.5, 3.0];
        assert!((s.target_objective().value(&x) - objective_p1(&p, &x)).abs() < 1e-9);
    }
}
