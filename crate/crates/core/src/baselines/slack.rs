//! Slack variables on the organ terms with greedy, monotone dose targets.
//!
//! Upper constraints contribute `a/(2n) ||A x + s - y||^2` and lower ones
//! `a/(2n) ||A x - s - y||^2`, with `s >= 0`. The fluence and slacks are
//! solved jointly; the targets `y` start at the threshold and may only move
//! away from it, with at most `cap` entries on the violating side.

use super::{BaselineError, BaselineOutcome};
use crate::model::{ConstraintId, Direction, ProblemSpec};
use crate::quadprog::{solve_nnls, NnlsOptions, Operator, QuadraticObjective, Term};
use crate::report::{check_constraints, SolveStatus, TraceRow};
use crate::solver::{Solver, SolverConfig};

/// Closest `y` to `v` with `y >= y_prev` and at most `cap` entries above `d`.
///
/// Entries already above `d` stay above; the remaining slots go to the
/// largest `v` beyond `d` (ties to the lower index). `y_prev` must itself
/// have at most `cap` entries above `d`.
pub fn project_monotone_upper(v: &[f64], y_prev: &[f64], d: f64, cap: usize) -> Vec<f64> {
    assert_eq!(v.len(), y_prev.len());
    let mut exceed: Vec<bool> = y_prev.iter().map(|&p| p > d).collect();
    let forced = exceed.iter().filter(|&&e| e).count();
    let mut free: Vec<usize> = (0..v.len()).filter(|&i| !exceed[i] && v[i] > d).collect();
    free.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    for &i in free.iter().take(cap.saturating_sub(forced)) {
        exceed[i] = true;
    }
    (0..v.len())
        .map(|i| {
            if exceed[i] {
                v[i].max(y_prev[i])
            } else {
                v[i].max(y_prev[i]).min(d)
            }
        })
        .collect()
}

struct Layout {
    ids: Vec<ConstraintId>,
    offsets: Vec<usize>,
    dim: usize,
}

fn layout(problem: &ProblemSpec) -> Layout {
    let ids = problem.constraint_ids();
    let mut offsets = Vec::with_capacity(ids.len());
    let mut dim = problem.beamlets;
    for id in &ids {
        offsets.push(dim);
        dim += problem.structure(id.structure).0.voxel_count;
    }
    Layout { ids, offsets, dim }
}

fn objective<'p>(problem: &'p ProblemSpec, lay: &Layout, y: &[Vec<f64>]) -> QuadraticObjective<'p> {
    let mut obj = QuadraticObjective::new(lay.dim, problem.lambda);
    obj.ridge_len = problem.beamlets;
    for t in &problem.targets {
        obj.terms.push(Term::new(
            t.objective.alpha / t.structure.voxel_count as f64,
            &t.matrix,
            t.objective.dose.clone(),
        ));
    }
    for ((&id, &off), yj) in lay.ids.iter().zip(&lay.offsets).zip(y) {
        let c = problem.constraint(id);
        let (s, a) = problem.structure(id.structure);
        let sign = match c.direction {
            Direction::Upper => 1.0,
            Direction::Lower => -1.0,
        };
        obj.terms.push(Term {
            weight: c.alpha / s.voxel_count as f64,
            blocks: vec![
                (0, Operator::Sparse(a)),
                (
                    off,
                    Operator::Identity {
                        len: s.voxel_count,
                        sign,
                    },
                ),
            ],
            target: yj.clone(),
        });
    }
    obj
}

pub fn solve_slack_greedy(problem: &ProblemSpec, cfg: &SolverConfig) -> Result<BaselineOutcome, BaselineError> {
    // Validates the shared tolerances.
    let solver = Solver::new(problem, cfg.clone())?;
    let lay = layout(problem);
    let m = problem.beamlets;
    let opts = NnlsOptions {
        tol: cfg.inner_tol,
        max_iters: cfg.inner_max_iters.unwrap_or(50 * lay.dim.max(1)),
        lipschitz: None,
        seed: cfg.seed,
    };

    let mut y: Vec<Vec<f64>> = lay
        .ids
        .iter()
        .map(|&id| vec![problem.constraint(id).dose; problem.structure(id.structure).0.voxel_count])
        .collect();
    let mut z = vec![0.0; lay.dim];
    z[..m].copy_from_slice(&solver.unconstrained_fluence()?.x);

    let mut history = Vec::new();
    let mut trace = Vec::new();
    let mut y_history = vec![y.clone()];
    let mut status = SolveStatus::MaxItersExceeded;
    let mut iterations = 0;
    let mut err = f64::INFINITY;
    for k in 0..=cfg.max_outer_iters {
        let r = solve_nnls(&objective(problem, &lay, &y), &z, &opts)?;
        z = r.x;
        history.push(r.value);
        trace.push(TraceRow {
            k,
            g: r.value,
            err: err.is_finite().then_some(err),
            violations: check_constraints(problem, &z[..m]).iter().map(|c| c.violation_count).collect(),
        });
        if k > 0 && err <= cfg.epsilon {
            status = SolveStatus::Converged;
            break;
        }
        if k == cfg.max_outer_iters {
            break;
        }
        iterations = k + 1;

        err = 0.0;
        for (j, (&id, &off)) in lay.ids.iter().zip(&lay.offsets).enumerate() {
            let c = problem.constraint(id);
            let (s, a) = problem.structure(id.structure);
            let n = s.voxel_count;
            let dose = a.mul_vec(&z[..m]);
            let slack = &z[off..off + n];
            let cap = c.cap(n);
            let y_new = match c.direction {
                Direction::Upper => {
                    let v: Vec<f64> = dose.iter().zip(slack).map(|(d, s)| d + s).collect();
                    project_monotone_upper(&v, &y[j], c.dose, cap)
                }
                Direction::Lower => {
                    let v: Vec<f64> = dose.iter().zip(slack).map(|(d, s)| s - d).collect();
                    let prev: Vec<f64> = y[j].iter().map(|p| -p).collect();
                    project_monotone_upper(&v, &prev, -c.dose, cap)
                        .into_iter()
                        .map(|v| -v)
                        .collect()
                }
            };
            let dy: f64 = y_new
                .iter()
                .zip(&y[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            err += c.alpha / n as f64 * dy;
            y[j] = y_new;
        }
        y_history.push(y.clone());
    }
    z.truncate(m);
    Ok(BaselineOutcome {
        x: z,
        status,
        iterations,
        history,
        trace,
        y_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::DoseMatrix;
    use crate::model::{DoseVolumeConstraint, Organ, StructureKind, StructureSpec, Target, TargetObjective};
    use proptest::prelude::*;

    fn brute_force(v: &[f64], y_prev: &[f64], d: f64, cap: usize) -> f64 {
        let n = v.len();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize > cap {
                continue;
            }
            let mut cost = 0.0;
            let mut ok = true;
            for i in 0..n {
                let exceed = mask & (1 << i) != 0;
                if !exceed && y_prev[i] > d {
                    ok = false;
                    break;
                }
                let y = if exceed { v[i].max(y_prev[i]) } else { v[i].max(y_prev[i]).min(d) };
                cost += (y - v[i]) * (y - v[i]);
            }
            if ok {
                best = best.min(cost);
            }
        }
        best
    }

    #[test]
    fn keeps_largest_violator() {
        let y = project_monotone_upper(&[25.0, 30.0, 10.0], &[20.0; 3], 20.0, 1);
        assert_eq!(y, vec![20.0, 30.0, 20.0]);
    }

    #[test]
    fn forced_entries_use_the_slots() {
        let y = project_monotone_upper(&[25.0, 30.0, 10.0], &[21.0, 20.0, 20.0], 20.0, 1);
        assert_eq!(y, vec![25.0, 20.0, 20.0]);
    }

    proptest! {
        #[test]
        fn monotone_projection_is_optimal(
            v in prop::collection::vec(-5.0f64..40.0, 1..8),
            lift in prop::collection::vec(0.0f64..15.0, 8),
            cap_frac in 0.0f64..1.0,
        ) {
            let n = v.len();
            let d = 20.0;
            let cap = (cap_frac * (n + 1) as f64) as usize;
            // Build a feasible previous target: the first `cap` lifted entries may exceed.
            let y_prev: Vec<f64> = (0..n)
                .map(|i| if i < cap { d - 5.0 + lift[i] } else { (d - lift[i]).min(d) })
                .collect();
            let y = project_monotone_upper(&v, &y_prev, d, cap);
            prop_assert!(y.iter().zip(&y_prev).all(|(a, b)| a >= b));
            prop_assert!(y.iter().filter(|&&a| a > d).count() <= cap);
            let cost: f64 = y.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
            prop_assert!((cost - brute_force(&v, &y_prev, d, cap)).abs() <= 1e-9 * (1.0 + cost));
        }
    }

    fn toy(oar: Vec<Vec<f64>>) -> ProblemSpec {
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
                constraints: vec![DoseVolumeConstraint::upper(20.0, 50.0).with_alpha(10.0)],
            }],
            5e-6,
        )
        .unwrap()
    }

    #[test]
    fn zero_organ_matrix_decouples() {
        let p = toy(vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        let out = solve_slack_greedy(&p, &SolverConfig::default()).unwrap();
        assert_eq!(out.status, SolveStatus::Converged);
        let ptv = Solver::new(&p, SolverConfig::default()).unwrap().unconstrained_fluence().unwrap();
        for (a, b) in out.x.iter().zip(&ptv.x) {
            assert!((a - b).abs() < 1e-5);
        }
        assert!(out.y_history.last().unwrap()[0].iter().all(|&v| v == 20.0));
    }

    #[test]
    fn targets_never_decrease() {
        let p = toy(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let out = solve_slack_greedy(&p, &SolverConfig::default()).unwrap();
        for pair in out.y_history.windows(2) {
            for (a, b) in pair[0][0].iter().zip(&pair[1][0]) {
                assert!(b >= a);
            }
        }
    }

    #[test]
    fn lower_targets_never_increase() {
        let p = ProblemSpec::new(
            vec![Target {
                structure: StructureSpec::new("PTV", StructureKind::Ptv, 2),
                matrix: DoseMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
                objective: TargetObjective::uniform(60.0, 1.0),
                constraints: vec![DoseVolumeConstraint::lower(70.0, 50.0)],
            }],
            vec![],
            1e-4,
        )
        .unwrap();
        let out = solve_slack_greedy(&p, &SolverConfig::default()).unwrap();
        for pair in out.y_history.windows(2) {
            for (a, b) in pair[0][0].iter().zip(&pair[1][0]) {
                assert!(b <= a);
            }
        }
        let last = out.y_history.last().unwrap();
        assert!(last[0].iter().filter(|&&v| v < 70.0).count() <= 1);
    }
}
