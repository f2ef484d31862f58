//! Iterative re-weighting around block coordinate descent.
//!
//! Each round solves the relaxed problem, then for every constraint still
//! violated against its original threshold and percent: raises the weight by
//! `1 + sigma`, moves the threshold into the constraint by `sigma` (down for
//! upper constraints, up for lower ones) and shrinks the percent by
//! `1 - sigma`. The outer tolerance decays by `gamma` every round.

use serde::{Deserialize, Serialize};

use crate::model::{Direction, ProblemSpec};
use crate::report::{check_constraints, target_d95, ConstraintCheck, RoundRecord, SolveStatus};
use crate::solver::{Initialization, SolveOutcome, Solver, SolverConfig, SolverError, StepPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    AllConstraintsMet,
    /// Stop once any target D95 falls below this fraction of its value at the
    /// unconstrained initialization. Every constraint is updated each round.
    D95Floor(f64),
    /// Stop after this many re-weighting rounds.
    MaxOuterRounds(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReweightConfig {
    pub sigma: f64,
    pub gamma: f64,
    pub stop: StopRule,
    /// Backstop on rounds for the other stop rules.
    pub max_rounds: usize,
}

impl Default for ReweightConfig {
    fn default() -> Self {
        Self {
            sigma: 0.01,
            gamma: 0.99,
            stop: StopRule::AllConstraintsMet,
            max_rounds: 500,
        }
    }
}

impl ReweightConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(SolverError::InvalidConfig(format!("sigma = {} outside (0, 1)", self.sigma)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(SolverError::InvalidConfig(format!("gamma = {} outside (0, 1)", self.gamma)));
        }
        if let StopRule::D95Floor(f) = self.stop {
            if !(f > 0.0 && f < 1.0) {
                return Err(SolverError::InvalidConfig(format!("D95 floor fraction {f} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Strict violation counts against the thresholds and percents of `original`.
pub fn check_original_constraints(original: &ProblemSpec, x: &[f64]) -> Vec<ConstraintCheck> {
    check_constraints(original, x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReweightOutcome {
    pub x: Vec<f64>,
    pub status: SolveStatus,
    pub rounds: Vec<RoundRecord>,
    /// Parameters after the last update.
    pub final_problem: ProblemSpec,
    pub last: SolveOutcome,
    pub initial_d95: Vec<f64>,
    pub total_iterations: usize,
}

pub fn run_reweight(
    problem: &ProblemSpec,
    rcfg: &ReweightConfig,
    scfg: &SolverConfig,
) -> Result<ReweightOutcome, SolverError> {
    rcfg.validate()?;
    let ids = problem.constraint_ids();
    let mut work = problem.clone();
    let mut epsilon = scfg.epsilon;
    let base = SolverConfig {
        step: StepPolicy::Fraction(1.0),
        ..scfg.clone()
    };

    let initial_d95 = {
        let solver = Solver::new(problem, base.clone())?;
        target_d95(problem, &solver.unconstrained_fluence()?.x)
    };

    let mut rounds = Vec::new();
    let mut total_iterations = 0;
    let mut init = base.init.clone();
    let mut round = 0;
    loop {
        let cfg = SolverConfig {
            epsilon,
            init: init.clone(),
            ..base.clone()
        };
        let outcome = Solver::new(&work, cfg)?.run()?;
        total_iterations += outcome.state.k;
        let x = outcome.state.x.clone();
        let checks = check_original_constraints(problem, &x);
        let d95 = target_d95(problem, &x);
        rounds.push(RoundRecord {
            round,
            alpha: ids.iter().map(|&id| work.constraint(id).alpha).collect(),
            dose: ids.iter().map(|&id| work.constraint(id).dose).collect(),
            percent: ids.iter().map(|&id| work.constraint(id).percent).collect(),
            violations: checks.iter().map(|c| c.violation_count).collect(),
            target_d95: d95.clone(),
            g: *outcome.state.g_history.last().unwrap(),
            epsilon,
            iterations: outcome.state.k,
        });
        log::info!(
            "round {round}: {} iterations, violations {:?}",
            outcome.state.k,
            rounds.last().unwrap().violations
        );

        let stop = match rcfg.stop {
            StopRule::AllConstraintsMet => checks.iter().all(|c| c.satisfied),
            StopRule::D95Floor(f) => d95.iter().zip(&initial_d95).any(|(d, d0)| *d < f * d0),
            StopRule::MaxOuterRounds(limit) => round >= limit,
        };
        let backstop = !matches!(rcfg.stop, StopRule::MaxOuterRounds(_)) && round >= rcfg.max_rounds;
        if stop || backstop {
            let status = if stop {
                SolveStatus::Converged
            } else {
                SolveStatus::MaxItersExceeded
            };
            return Ok(ReweightOutcome {
                x,
                status,
                rounds,
                final_problem: work,
                last: outcome,
                initial_d95,
                total_iterations,
            });
        }

        let update_all = matches!(rcfg.stop, StopRule::D95Floor(_));
        for (check, &id) in checks.iter().zip(&ids) {
            if !(update_all || !check.satisfied) {
                continue;
            }
            let c = work.constraint_mut(id);
            c.alpha *= 1.0 + rcfg.sigma;
            c.dose *= match c.direction {
                Direction::Upper => 1.0 - rcfg.sigma,
                Direction::Lower => 1.0 + rcfg.sigma,
            };
            c.percent *= 1.0 - rcfg.sigma;
        }
        epsilon *= rcfg.gamma;
        init = Initialization::Fluence(x);
        round += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::DoseMatrix;
    use crate::model::{DoseVolumeConstraint, Organ, StructureKind, StructureSpec, Target, TargetObjective};

    fn problem(oar: Vec<Vec<f64>>, c: DoseVolumeConstraint) -> ProblemSpec {
        let n = oar.len();
        ProblemSpec::new(
            vec![Target {
                structure: StructureSpec::new("PTV", StructureKind::Ptv, 1),
                matrix: DoseMatrix::from_dense(&[vec![1.0, 1.0]]).unwrap(),
                objective: TargetObjective::uniform(81.0, 1.0),
                constraints: vec![],
            }],
            vec![Organ {
                structure: StructureSpec::new("OAR", StructureKind::Oar, n),
                matrix: DoseMatrix::from_dense(&oar).unwrap(),
                constraints: vec![c],
            }],
            1e-6,
        )
        .unwrap()
    }

    #[test]
    fn original_constraint_examples() {
        let p = problem(
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]],
            DoseVolumeConstraint::upper(20.0, 50.0),
        );
        // Doses [10, 30, 20] at x = (10, 30): one voxel strictly above 20, cap 1.
        let c = &check_original_constraints(&p, &[10.0, 30.0])[0];
        assert_eq!((c.violation_count, c.cap, c.satisfied), (1, 1, true));
        let c = &check_original_constraints(&p, &[20.0, 20.0])[0];
        assert_eq!(c.violation_count, 0);

        let lower = problem(vec![vec![1.0, 0.0], vec![0.0, 1.0]], DoseVolumeConstraint::lower(81.0, 50.0));
        let c = &check_original_constraints(&lower, &[80.0, 82.0])[0];
        assert_eq!((c.violation_count, c.cap, c.satisfied), (1, 1, true));
    }

    #[test]
    fn three_voxel_count() {
        let p = problem(
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 5.0 / 3.0]],
            DoseVolumeConstraint::upper(20.0, 50.0),
        );
        let c = &check_original_constraints(&p, &[10.0, 30.0])[0];
        assert_eq!((c.violation_count, c.cap, c.satisfied), (2, 1, false));
    }

    #[test]
    fn met_at_round_zero_returns_untouched() {
        let p = problem(vec![vec![0.01, 0.0], vec![0.0, 0.01]], DoseVolumeConstraint::upper(20.0, 50.0));
        let out = run_reweight(&p, &ReweightConfig::default(), &SolverConfig::default()).unwrap();
        assert_eq!(out.rounds.len(), 1);
        assert_eq!(out.final_problem, p);
        assert_eq!(out.status, SolveStatus::Converged);
    }

    #[test]
    fn updates_follow_sigma_and_gamma() {
        // The organ sits on the target's rays, so the constraint stays violated.
        let p = problem(vec![vec![1.0, 1.0], vec![1.0, 1.0]], DoseVolumeConstraint::upper(20.0, 50.0));
        let rcfg = ReweightConfig {
            stop: StopRule::MaxOuterRounds(3),
            ..Default::default()
        };
        let out = run_reweight(&p, &rcfg, &SolverConfig::default()).unwrap();
        assert_eq!(out.rounds.len(), 4);
        assert!((out.rounds[1].alpha[0] - 1.01).abs() < 1e-15);
        assert!((out.rounds[1].dose[0] - 19.8).abs() < 1e-12);
        assert!((out.rounds[3].epsilon - 1e-3 * 0.99f64.powi(3)).abs() < 1e-18);
        for w in out.rounds.windows(2) {
            assert!(w[1].alpha[0] >= w[0].alpha[0]);
            assert!(w[1].dose[0] <= w[0].dose[0]);
            assert!(w[1].percent[0] <= w[0].percent[0]);
            assert!(w[1].epsilon < w[0].epsilon);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let p = problem(vec![vec![1.0, 0.0]], DoseVolumeConstraint::upper(20.0, 50.0));
        let bad = ReweightConfig {
            sigma: -0.1,
            ..Default::default()
        };
        assert!(run_reweight(&p, &bad, &SolverConfig::default()).is_err());
    }
}
