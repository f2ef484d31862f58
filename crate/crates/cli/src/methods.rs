use std::time::Instant;

use fmo_core::baselines::{polish, solve_penalty_iterative, solve_slack_greedy, BaselineError, PenaltyConfig, PolishOptions};
use fmo_core::model::{ProblemSpec, StructureRef};
use fmo_core::report::{SolveReport, SolveStatus};
use fmo_core::reweight::{run_reweight, ReweightConfig};
use fmo_core::solver::{run_bcd, run_pgd, SolverConfig, StepPolicy};
use serde_json::json;

use crate::args::{AlphaOverride, Method, ReweightParams, SolverArgs};
use crate::Failure;

/// Applies `--lambda` and `--alpha` to a loaded problem.
pub fn apply_overrides(problem: &mut ProblemSpec, args: &SolverArgs) -> Result<(), Failure> {
    if let Some(l) = args.lambda {
        problem.lambda = l;
    }
    for o in &args.alpha {
        apply_alpha(problem, o)?;
    }
    Ok(())
}

fn apply_alpha(problem: &mut ProblemSpec, o: &AlphaOverride) -> Result<(), Failure> {
    let r = problem
        .structure_refs()
        .into_iter()
        .find(|&r| problem.structure(r).0.name == o.structure)
        .ok_or_else(|| Failure::usage(format!("no structure named {:?}", o.structure)))?;
    let constraints = match r {
        StructureRef::Target(i) => {
            if o.constraint.is_none() {
                problem.targets[i].objective.alpha = o.value;
                return Ok(());
            }
            &mut problem.targets[i].constraints
        }
        StructureRef::Organ(i) => &mut problem.organs[i].constraints,
    };
    match o.constraint {
        Some(k) => {
            let n = constraints.len();
            constraints
                .get_mut(k)
                .ok_or_else(|| Failure::usage(format!("{} has {n} constraints, no index {k}", o.structure)))?
                .alpha = o.value;
        }
        None => constraints.iter_mut().for_each(|c| c.alpha = o.value),
    }
    Ok(())
}

fn solver_config(args: &SolverArgs) -> SolverConfig {
    let d = SolverConfig::default();
    SolverConfig {
        epsilon: args.epsilon.unwrap_or(d.epsilon),
        step: StepPolicy::Fraction(args.step_fraction.unwrap_or(1.0)),
        max_outer_iters: args.max_iters.unwrap_or(d.max_outer_iters),
        seed: args.seed,
        combine_constraints: args.combine,
        ..d
    }
}

pub fn reweight_config(p: &ReweightParams) -> ReweightConfig {
    ReweightConfig {
        sigma: p.sigma,
        gamma: p.gamma,
        stop: p.stop,
        max_rounds: p.max_rounds,
    }
}

/// Runs one method. The report is complete even when the iteration limit is
/// hit; its status says so.
pub fn run_method(
    problem: &ProblemSpec,
    method: Method,
    args: &SolverArgs,
    rw: &ReweightParams,
) -> Result<SolveReport, Failure> {
    if args.step_fraction.is_some() && method != Method::Pgd {
        return Err(Failure::usage(format!("--step-fraction applies to pgd, not {}", method.name())));
    }
    let cfg = solver_config(args);
    let start = Instant::now();
    let mut report = match method {
        Method::Bcd | Method::Pgd => {
            let out = if method == Method::Bcd {
                run_bcd(problem, &cfg)
            } else {
                run_pgd(problem, &cfg)
            }?;
            let mut r = SolveReport::new(problem, method.name(), out.status, out.state.x);
            r.iterations = out.state.k;
            r.g_history = out.state.g_history;
            r.trace = out.trace;
            r.config = json!({ "solver": cfg, "steps": out.steps });
            r
        }
        Method::PenaltyIter => {
            let d = PenaltyConfig::default();
            let pcfg = PenaltyConfig {
                tol: args.epsilon.unwrap_or(d.tol),
                max_iters: args.max_iters.unwrap_or(d.max_iters),
                seed: args.seed,
                ..d
            };
            let out = solve_penalty_iterative(problem, &pcfg)?;
            let mut r = SolveReport::new(problem, method.name(), out.status, out.x);
            r.iterations = out.iterations;
            r.g_history = out.history;
            r.trace = out.trace;
            r.config = json!({ "tol": pcfg.tol, "max_iters": pcfg.max_iters, "seed": pcfg.seed });
            r
        }
        Method::SlackGreedy => {
            let out = solve_slack_greedy(problem, &cfg)?;
            let mut r = SolveReport::new(problem, method.name(), out.status, out.x);
            r.iterations = out.iterations;
            r.g_history = out.history;
            r.trace = out.trace;
            r.config = json!({ "solver": cfg });
            r
        }
        Method::Reweight => {
            let rcfg = reweight_config(rw);
            let out = run_reweight(problem, &rcfg, &cfg)?;
            let mut r = SolveReport::new(problem, method.name(), out.status, out.x);
            r.iterations = out.total_iterations;
            r.g_history = out.last.state.g_history;
            r.trace = out.last.trace;
            r.rounds = out.rounds;
            r.config = json!({ "solver": cfg, "reweight": rcfg });
            r
        }
    };
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    report.config["lambda"] = json!(problem.lambda);
    Ok(report)
}

pub fn run_polish(problem: &ProblemSpec, x: &[f64], source: &str) -> Result<SolveReport, Failure> {
    let start = Instant::now();
    let opts = PolishOptions::default();
    let mut report = match polish(problem, x, &opts) {
        Ok(out) => {
            let mut r = SolveReport::new(problem, "polish", SolveStatus::Converged, out.x);
            r.iterations = out.iterations;
            r.config = json!({
                "from": source,
                "margin": opts.margin,
                "kept_start": out.kept_start,
                "subvolumes": out.subvolumes,
            });
            r
        }
        Err(BaselineError::Infeasible { residuals, x }) => {
            let mut r = SolveReport::new(problem, "polish", SolveStatus::Infeasible, x);
            r.residuals = residuals;
            r.config = json!({ "from": source, "margin": opts.margin });
            r
        }
        Err(e) => return Err(e.into()),
    };
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
