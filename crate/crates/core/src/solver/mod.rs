//! Partial minimization over the fluence and projected gradient descent on
//! the value function `g(w) = min_{x >= 0} f(x, w)`.
//!
//! Each constrained block `b` contributes `a_b/(2 n_b) ||w_b - r_b(x)||^2`,
//! with `r_b(x) = A x - d` (upper), `d - A x` (lower) or `A x` for a block
//! that merges every constraint on a structure into one dose variable. The
//! partial gradient is `(a_b/n_b)(w_b - r_b(x(w)))`.

pub use crate::report::{SolveStatus, TraceRow};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::DoseMatrix;
use crate::model::{cap, ConstraintId, Direction, ProblemSpec, StructureRef};
use crate::projection::{self, CombinedDoseSet, LevelConstraint, ProjectionError};
use crate::quadprog::{
    kkt_residual, lipschitz_upper_bound, solve_nnls, NnlsOptions, NnlsResult, QpError, QuadraticObjective, Term,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("step t = {step} for block {block} outside (0, {max}]")]
    InvalidStep { block: usize, step: f64, max: f64 },
    #[error("inner solution is stale: KKT residual {residual:e} exceeds {limit:e}")]
    StaleInnerSolution { residual: f64, limit: f64 },
    #[error(transparent)]
    Inner(#[from] QpError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
}

/// Step sizes `t_b`, bounded by `n_b / a_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepPolicy {
    /// `t_b = fraction * n_b / a_b`.
    Fraction(f64),
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initialization {
    /// Fluence minimizing the target terms and ridge only; `w` is the
    /// projected residual at that fluence.
    Unconstrained,
    /// `w = 0`, fluence warm start at zero.
    Zero,
    /// `w` is the projected residual at the given fluence.
    Fluence(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub step: StepPolicy,
    pub max_outer_iters: usize,
    pub inner_tol: f64,
    /// Defaults to `50 m` when absent.
    pub inner_max_iters: Option<usize>,
    pub seed: u64,
    pub init: Initialization,
    /// Merge all constraints on a structure into one dose-space block.
    pub combine_constraints: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            step: StepPolicy::Fraction(1.0),
            max_outer_iters: 1000,
            inner_tol: 1e-8,
            inner_max_iters: None,
            seed: 0,
            init: Initialization::Unconstrained,
            combine_constraints: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockKind {
    Single(Direction),
    Combined,
}

/// One dose-volume term of the relaxed objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub structure: StructureRef,
    /// Constraint indices within the structure.
    pub members: Vec<usize>,
    pub kind: BlockKind,
    pub alpha: f64,
    pub n: usize,
}

impl Block {
    pub fn weight(&self) -> f64 {
        self.alpha / self.n as f64
    }

    pub fn ids(&self) -> impl Iterator<Item = ConstraintId> + '_ {
        self.members.iter().map(|&index| ConstraintId {
            structure: self.structure,
            index,
        })
    }
}

/// Builds the block list: one block per constraint, or one per structure when
/// `combine` is set. A merged block takes the largest member weight.
pub fn build_blocks(problem: &ProblemSpec, combine: bool) -> Vec<Block> {
    let mut blocks = Vec::new();
    for s in problem.structure_refs() {
        let cons = problem.constraints_of(s);
        if cons.is_empty() {
            continue;
        }
        let n = problem.structure(s).0.voxel_count;
        if combine && cons.len() > 1 {
            blocks.push(Block {
                structure: s,
                members: (0..cons.len()).collect(),
                kind: BlockKind::Combined,
                alpha: cons.iter().map(|c| c.alpha).fold(0.0, f64::max),
                n,
            });
        } else {
            for (i, c) in cons.iter().enumerate() {
                blocks.push(Block {
                    structure: s,
                    members: vec![i],
                    kind: BlockKind::Single(c.direction),
                    alpha: c.alpha,
                    n,
                });
            }
        }
    }
    blocks
}

/// Outer iterate: fluence `x = x(w)`, auxiliary blocks `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub x: Vec<f64>,
    pub w: Vec<Vec<f64>>,
    pub k: usize,
    pub err: f64,
    pub g_history: Vec<f64>,
    pub inner_kkt: f64,
    pub inner_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub measure: f64,
    pub per_block: Vec<f64>,
    pub is_epsilon_accurate: bool,
}

/// Outcome of a projected gradient or block coordinate descent run.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub state: SolverState,
    pub status: SolveStatus,
    pub trace: Vec<TraceRow>,
    pub steps: Vec<f64>,
}

/// The relaxed problem for a fixed block layout and step sizes.
pub struct Solver<'p> {
    pub problem: &'p ProblemSpec,
    pub blocks: Vec<Block>,
    pub steps: Vec<f64>,
    pub config: SolverConfig,
    lipschitz: f64,
    ptv_lipschitz: f64,
}

impl<'p> Solver<'p> {
    pub fn new(problem: &'p ProblemSpec, config: SolverConfig) -> Result<Self, SolverError> {
        if !(config.epsilon > 0.0) {
            return Err(SolverError::InvalidConfig(format!("epsilon = {} must be > 0", config.epsilon)));
        }
        if !(config.inner_tol > 0.0) {
            return Err(SolverError::InvalidConfig("inner_tol must be > 0".into()));
        }
        let blocks = build_blocks(problem, config.combine_constraints);
        let max: Vec<f64> = blocks.iter().map(|b| b.n as f64 / b.alpha).collect();
        let steps = match &config.step {
            StepPolicy::Fraction(f) => {
                if !(*f > 0.0 && *f <= 1.0) {
                    return Err(SolverError::InvalidConfig(format!("step fraction {f} outside (0, 1]")));
                }
                max.iter().map(|m| f * m).collect::<Vec<_>>()
            }
            StepPolicy::Explicit(t) => {
                if t.len() != blocks.len() {
                    return Err(SolverError::InvalidConfig(format!(
                        "{} steps for {} blocks",
                        t.len(),
                        blocks.len()
                    )));
                }
                t.clone()
            }
        };
        for (block, (&step, &m)) in steps.iter().zip(&max).enumerate() {
            if !(step > 0.0 && step <= m * (1.0 + 1e-12)) {
                return Err(SolverError::InvalidStep { block, step, max: m });
            }
        }
        let mut solver = Self {
            problem,
            blocks,
            steps,
            config,
            lipschitz: 0.0,
            ptv_lipschitz: 0.0,
        };
        let w0: Vec<Vec<f64>> = solver.blocks.iter().map(|b| vec![0.0; b.n]).collect();
        solver.lipschitz = lipschitz_upper_bound(&solver.objective(&w0), solver.config.seed);
        solver.ptv_lipschitz = lipschitz_upper_bound(&solver.target_objective(), solver.config.seed);
        Ok(solver)
    }

    pub fn beamlets(&self) -> usize {
        self.problem.beamlets
    }

    fn matrix(&self, b: &Block) -> &'p DoseMatrix {
        self.problem.structure(b.structure).1
    }

    fn target_terms(&self) -> Vec<Term<'p>> {
        self.problem
            .targets
            .iter()
            .map(|t| {
                Term::new(
                    t.objective.alpha / t.structure.voxel_count as f64,
                    &t.matrix,
                    t.objective.dose.clone(),
                )
            })
            .collect()
    }

    /// Target terms and ridge only.
    pub fn target_objective(&self) -> QuadraticObjective<'p> {
        QuadraticObjective {
            terms: self.target_terms(),
            ridge: self.problem.lambda,
            ridge_len: self.beamlets(),
            dim: self.beamlets(),
        }
    }

    /// `f(., w)` as a quadratic in `x`.
    pub fn objective(&self, w: &[Vec<f64>]) -> QuadraticObjective<'p> {
        let mut terms = self.target_terms();
        for (b, wb) in self.blocks.iter().zip(w) {
            let target: Vec<f64> = match b.kind {
                BlockKind::Single(dir) => {
                    let d = self.problem.constraint(ConstraintId {
                        structure: b.structure,
                        index: b.members[0],
                    });
                    match dir {
                        Direction::Upper => wb.iter().map(|v| d.dose + v).collect(),
                        Direction::Lower => wb.iter().map(|v| d.dose - v).collect(),
                    }
                }
                BlockKind::Combined => wb.clone(),
            };
            terms.push(Term::new(b.weight(), self.matrix(b), target));
        }
        QuadraticObjective {
            terms,
            ridge: self.problem.lambda,
            ridge_len: self.beamlets(),
            dim: self.beamlets(),
        }
    }

    fn nnls_options(&self, lipschitz: f64) -> NnlsOptions {
        NnlsOptions {
            tol: self.config.inner_tol,
            max_iters: self.config.inner_max_iters.unwrap_or(50 * self.beamlets().max(1)),
            lipschitz: Some(lipschitz),
            seed: self.config.seed,
        }
    }

    /// `x(w)` and `g(w)`, warm-started from `x0`.
    pub fn inner_solve(&self, w: &[Vec<f64>], x0: &[f64]) -> Result<NnlsResult, SolverError> {
        let obj = self.objective(w);
        let r = solve_nnls(&obj, x0, &self.nnls_options(self.lipschitz))?;
        if !r.converged {
            log::warn!(
                "inner solve stopped after {} iterations at KKT residual {:e}",
                r.iters,
                r.kkt_residual
            );
        }
        Ok(r)
    }

    /// Returns `(g(w), x(w))`.
    pub fn eval_g(&self, w: &[Vec<f64>], x0: Option<&[f64]>) -> Result<(f64, Vec<f64>), SolverError> {
        let zero = vec![0.0; self.beamlets()];
        let r = self.inner_solve(w, x0.unwrap_or(&zero))?;
        Ok((r.value, r.x))
    }

    /// Residual `r_b(x)` of block `b`.
    pub fn residual(&self, b: usize, x: &[f64]) -> Vec<f64> {
        let block = &self.blocks[b];
        let dose = self.matrix(block).mul_vec(x);
        match block.kind {
            BlockKind::Single(dir) => {
                let d = self.problem.constraint(block.ids().next().unwrap()).dose;
                match dir {
                    Direction::Upper => dose.iter().map(|v| v - d).collect(),
                    Direction::Lower => dose.iter().map(|v| d - v).collect(),
                }
            }
            BlockKind::Combined => dose,
        }
    }

    /// Projection onto the feasible set of block `b`.
    pub fn project(&self, b: usize, v: &[f64]) -> Result<Vec<f64>, SolverError> {
        let block = &self.blocks[b];
        match block.kind {
            BlockKind::Single(_) => {
                let c = self.problem.constraint(block.ids().next().unwrap());
                Ok(projection::project_upper(v, c.cap(block.n)))
            }
            BlockKind::Combined => Ok(projection::project_combined(v, &self.combined_set(b))?),
        }
    }

    pub fn combined_set(&self, b: usize) -> CombinedDoseSet {
        let block = &self.blocks[b];
        CombinedDoseSet {
            n: block.n,
            constraints: block
                .ids()
                .map(|id| {
                    let c = self.problem.constraint(id);
                    LevelConstraint {
                        direction: c.direction,
                        dose: c.dose,
                        cap: cap(block.n, c.percent),
                    }
                })
                .collect(),
        }
    }

    /// Partial gradients at `w`, given `x = x(w)`.
    pub fn grad_g(&self, w: &[Vec<f64>], x: &[f64]) -> Result<Vec<Vec<f64>>, SolverError> {
        let obj = self.objective(w);
        let mut grad = vec![0.0; x.len()];
        obj.value_and_grad(x, &mut grad);
        let residual = kkt_residual(x, &grad);
        let limit = 10.0 * self.config.inner_tol;
        if residual > limit {
            return Err(SolverError::StaleInnerSolution { residual, limit });
        }
        Ok(self.grad_unchecked(w, x))
    }

    fn grad_unchecked(&self, w: &[Vec<f64>], x: &[f64]) -> Vec<Vec<f64>> {
        self.blocks
            .iter()
            .enumerate()
            .map(|(b, block)| {
                let r = self.residual(b, x);
                w[b].iter().zip(&r).map(|(wi, ri)| block.weight() * (wi - ri)).collect()
            })
            .collect()
    }

    /// `proj(w - T grad g(w))` with `x = x(w)`.
    pub fn pgd_update(&self, w: &[Vec<f64>], x: &[f64]) -> Result<Vec<Vec<f64>>, SolverError> {
        let grad = self.grad_unchecked(w, x);
        (0..self.blocks.len())
            .map(|b| {
                let t = self.steps[b];
                let v: Vec<f64> = w[b].iter().zip(&grad[b]).map(|(wi, gi)| wi - t * gi).collect();
                self.project(b, &v)
            })
            .collect()
    }

    /// `argmin_{w in Omega} f(x, w) = proj(r(x))`.
    pub fn bcd_update(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, SolverError> {
        (0..self.blocks.len())
            .map(|b| self.project(b, &self.residual(b, x)))
            .collect()
    }

    fn is_bcd(&self) -> bool {
        self.blocks
            .iter()
            .zip(&self.steps)
            .all(|(b, &t)| t == b.n as f64 / b.alpha)
    }

    /// `err = sum_b ||w'_b - w_b|| / t_b`.
    pub fn change(&self, w: &[Vec<f64>], w_new: &[Vec<f64>]) -> f64 {
        w.iter()
            .zip(w_new)
            .zip(&self.steps)
            .map(|((a, b), t)| projection::squared_distance(a, b).sqrt() / t)
            .sum()
    }

    /// Fluence minimizing the target terms and ridge.
    pub fn unconstrained_fluence(&self) -> Result<NnlsResult, SolverError> {
        let obj = self.target_objective();
        let x0 = vec![0.0; self.beamlets()];
        Ok(solve_nnls(&obj, &x0, &self.nnls_options(self.ptv_lipschitz))?)
    }

    /// Initial state per the configured strategy, with `x = x(w0)` solved.
    pub fn initialize(&self) -> Result<SolverState, SolverError> {
        let m = self.beamlets();
        let (x_start, w) = match &self.config.init {
            Initialization::Unconstrained => {
                let x0 = self.unconstrained_fluence()?.x;
                let w = self.bcd_update(&x0)?;
                (x0, w)
            }
            Initialization::Zero => (vec![0.0; m], self.blocks.iter().map(|b| vec![0.0; b.n]).collect()),
            Initialization::Fluence(x) => {
                if x.len() != m {
                    return Err(SolverError::InvalidConfig(format!(
                        "initial fluence has length {}, expected {m}",
                        x.len()
                    )));
                }
                let x: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
                let w = self.bcd_update(&x)?;
                (x, w)
            }
        };
        self.state_from(w, &x_start)
    }

    /// State at given auxiliary blocks, solving the inner problem.
    pub fn state_from(&self, w: Vec<Vec<f64>>, x_warm: &[f64]) -> Result<SolverState, SolverError> {
        let r = self.inner_solve(&w, x_warm)?;
        Ok(SolverState {
            x: r.x,
            w,
            k: 0,
            err: f64::INFINITY,
            g_history: vec![r.value],
            inner_kkt: r.kkt_residual,
            inner_iters: r.iters,
        })
    }

    /// One outer iteration: update `w` from the current `x(w)`, then re-solve
    /// the inner problem.
    pub fn step(&self, state: &mut SolverState) -> Result<(), SolverError> {
        let w_new = if self.is_bcd() {
            self.bcd_update(&state.x)?
        } else {
            self.pgd_update(&state.w, &state.x)?
        };
        state.err = self.change(&state.w, &w_new);
        state.w = w_new;
        let r = self.inner_solve(&state.w, &state.x)?;
        state.x = r.x;
        state.g_history.push(r.value);
        state.inner_kkt = r.kkt_residual;
        state.inner_iters = r.iters;
        state.k += 1;
        Ok(())
    }

    pub fn trace_row(&self, state: &SolverState) -> TraceRow {
        TraceRow {
            k: state.k,
            g: *state.g_history.last().unwrap(),
            err: state.err.is_finite().then_some(state.err),
            violations: self
                .problem
                .constraint_ids()
                .into_iter()
                .map(|id| {
                    let dose = self.problem.dose(id.structure, &state.x);
                    self.problem.constraint(id).violation_count(&dose)
                })
                .collect(),
        }
    }

    /// Runs outer iterations from `state` until `err <= epsilon` or the
    /// iteration limit.
    pub fn run_from(&self, mut state: SolverState) -> Result<SolveOutcome, SolverError> {
        let mut trace = vec![self.trace_row(&state)];
        let status = if self.blocks.is_empty() {
            state.err = 0.0;
            SolveStatus::Converged
        } else {
            loop {
                if state.k >= self.config.max_outer_iters {
                    break SolveStatus::MaxItersExceeded;
                }
                self.step(&mut state)?;
                trace.push(self.trace_row(&state));
                if state.err <= self.config.epsilon {
                    break SolveStatus::Converged;
                }
            }
        };
        Ok(SolveOutcome {
            state,
            status,
            trace,
            steps: self.steps.clone(),
        })
    }

    pub fn run(&self) -> Result<SolveOutcome, SolverError> {
        self.run_from(self.initialize()?)
    }

    /// Weighted squared length of one projected gradient step from `w`.
    pub fn stationarity(&self, w: &[Vec<f64>], x0: Option<&[f64]>) -> Result<StationarityReport, SolverError> {
        let (_, x) = self.eval_g(w, x0)?;
        let w_bar = self.pgd_update(w, &x)?;
        let per_block: Vec<f64> = w
            .iter()
            .zip(&w_bar)
            .zip(&self.steps)
            .map(|((a, b), t)| projection::squared_distance(a, b) / (t * t))
            .collect();
        let measure = per_block.iter().sum();
        Ok(StationarityReport {
            measure,
            per_block,
            is_epsilon_accurate: measure <= self.config.epsilon,
        })
    }
}

/// Projected gradient descent on `g` with the configured step policy.
pub fn run_pgd(problem: &ProblemSpec, config: &SolverConfig) -> Result<SolveOutcome, SolverError> {
    Solver::new(problem, config.clone())?.run()
}

/// Block coordinate descent: full steps `t_b = n_b / a_b`.
pub fn run_bcd(problem: &ProblemSpec, config: &SolverConfig) -> Result<SolveOutcome, SolverError> {
    let config = SolverConfig {
        step: StepPolicy::Fraction(1.0),
        ..config.clone()
    };
    Solver::new(problem, config)?.run()
}
