mod args;
mod methods;
mod output;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use fmo_core::baselines::BaselineError;
use fmo_core::dosegen::{
    generate_phantom, load_problem, prostate_phantom, random_phantom, save_problem, toy_phantom, DosegenError, PhantomSpec,
};
use fmo_core::model::{ProblemSpec, StructureKind};
use fmo_core::report::{SolveReport, SolveStatus};
use fmo_core::solver::SolverError;
use rayon::prelude::*;
use serde::Serialize;

use args::{Cli, Command, CompareArgs, Method, PhantomArgs, PolishArgs, Preset, ReweightArgs, SolveArgs};
use output::{csv_bytes, json_bytes, write_atomic, write_report};

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub const USAGE: u8 = 2;
    pub const MAX_ITERS: u8 = 3;
    pub const INFEASIBLE: u8 = 4;

    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: Self::USAGE,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::usage(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<DosegenError> for Failure {
    fn from(e: DosegenError) -> Self {
        Self::usage(e.to_string())
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::InvalidConfig(_) | SolverError::InvalidStep { .. } => Self::usage(e.to_string()),
            _ => Self::internal(e.to_string()),
        }
    }
}

impl From<BaselineError> for Failure {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::Solver(e) => e.into(),
            BaselineError::InvalidInput(_) => Self::usage(e.to_string()),
            BaselineError::Infeasible { .. } => Self {
                code: Self::INFEASIBLE,
                message: e.to_string(),
            },
            BaselineError::Qp(_) => Self::internal(e.to_string()),
        }
    }
}

fn phantom_spec(a: &PhantomArgs) -> Result<PhantomSpec, Failure> {
    let mut spec = match &a.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
        }
        None => match a.preset {
            Preset::Prostate => prostate_phantom(),
            Preset::Toy => toy_phantom(),
            Preset::Random => random_phantom(a.seed.unwrap_or(0)),
        },
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    Ok(spec)
}

fn cmd_phantom(a: PhantomArgs) -> Result<(), Failure> {
    let spec = phantom_spec(&a)?;
    let problem = generate_phantom(&spec)?;
    save_problem(&problem, &a.out)?;
    write_atomic(&a.out.join("phantom.json"), &json_bytes(&spec)?)?;
    println!(
        "{}: {} beamlets, {} targets, {} organs",
        a.out.display(),
        problem.beamlets,
        problem.targets.len(),
        problem.organs.len()
    );
    Ok(())
}

fn load(dir: &Path, solver: &args::SolverArgs) -> Result<ProblemSpec, Failure> {
    let mut p = load_problem(dir)?;
    methods::apply_overrides(&mut p, solver)?;
    p.validate().map_err(|e| Failure::usage(e.to_string()))
}

fn summarize(report: &SolveReport) {
    println!(
        "{}: {:?} after {} iterations, objective {:.6}, {:.2}s",
        report.method, report.status, report.iterations, report.objective_p1, report.elapsed_seconds
    );
    for c in &report.constraints {
        println!(
            "  {}: {} of cap {} violating{}",
            c.label,
            c.violation_count,
            c.cap,
            if c.satisfied { "" } else { " (not met)" }
        );
    }
}

/// Exit status implied by a written report.
fn finish(report: &SolveReport) -> Result<(), Failure> {
    match report.status {
        SolveStatus::Converged => Ok(()),
        SolveStatus::MaxItersExceeded => Err(Failure {
            code: Failure::MAX_ITERS,
            message: format!("{} stopped at the iteration limit; outputs are partial", report.method),
        }),
        SolveStatus::Infeasible => Err(Failure {
            code: Failure::INFEASIBLE,
            message: format!("hard dose bounds are infeasible; worst residuals {:?}", report.residuals),
        }),
    }
}

fn cmd_solve(a: SolveArgs) -> Result<(), Failure> {
    let problem = load(&a.problem, &a.solver)?;
    let report = methods::run_method(&problem, a.method, &a.solver, &a.reweight)?;
    write_report(&a.out, &report)?;
    summarize(&report);
    finish(&report)
}

fn cmd_reweight(a: ReweightArgs) -> Result<(), Failure> {
    let problem = load(&a.problem, &a.solver)?;
    let report = methods::run_method(&problem, Method::Reweight, &a.solver, &a.params)?;
    write_report(&a.out, &report)?;
    summarize(&report);
    println!("  {} rounds", report.rounds.len().saturating_sub(1));
    finish(&report)
}

fn cmd_polish(a: PolishArgs) -> Result<(), Failure> {
    let problem = load_problem(&a.problem)?;
    let text = fs::read_to_string(&a.from).map_err(|e| Failure::io(&a.from, e))?;
    let source: SolveReport =
        serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", a.from.display())))?;
    let report = methods::run_polish(&problem, &source.fluence, &a.from.display().to_string())?;
    write_report(&a.out, &report)?;
    summarize(&report);
    finish(&report)
}

#[derive(Debug, Serialize)]
struct CompareRow {
    method: String,
    status: SolveStatus,
    iterations: usize,
    objective_p1: f64,
    seconds: f64,
    /// D95 per target, in problem order.
    d95: Vec<(String, f64)>,
    /// Percent of voxels past each constraint's dose level.
    percent_violating: Vec<(String, f64)>,
    all_met: bool,
}

impl CompareRow {
    fn new(r: &SolveReport) -> Self {
        Self {
            method: r.method.clone(),
            status: r.status,
            iterations: r.iterations,
            objective_p1: r.objective_p1,
            seconds: r.elapsed_seconds,
            d95: r
                .structures
                .iter()
                .filter(|s| s.kind == StructureKind::Ptv)
                .map(|s| (s.name.clone(), s.d95))
                .collect(),
            percent_violating: r.constraints.iter().map(|c| (c.label.clone(), c.percent_violating)).collect(),
            all_met: r.all_satisfied(),
        }
    }
}

fn thread_count() -> Result<usize, Failure> {
    match std::env::var("FMO_THREADS") {
        Err(_) => Ok(0),
        Ok(v) => v.trim().parse().map_err(|_| Failure::usage(format!("FMO_THREADS={v:?} is not a count"))),
    }
}

fn compare_csv(rows: &[CompareRow]) -> Result<Vec<u8>, Failure> {
    csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        let mut header: Vec<String> = ["method", "status", "iterations", "objective_p1", "seconds"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        if let Some(first) = rows.first() {
            header.extend(first.d95.iter().map(|(n, _)| format!("d95[{n}]")));
            header.extend(first.percent_violating.iter().map(|(l, _)| format!("percent[{l}]")));
        }
        header.push("all_met".into());
        w.write_record(&header)?;
        for r in rows {
            let status = serde_json::to_value(r.status).unwrap();
            let mut rec = vec![
                r.method.clone(),
                status.as_str().unwrap_or_default().to_string(),
                r.iterations.to_string(),
                r.objective_p1.to_string(),
                format!("{:.3}", r.seconds),
            ];
            rec.extend(r.d95.iter().map(|(_, v)| v.to_string()));
            rec.extend(r.percent_violating.iter().map(|(_, v)| v.to_string()));
            rec.push(r.all_met.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    })
}

fn cmd_compare(a: CompareArgs) -> Result<(), Failure> {
    let mut seen = HashSet::new();
    let mut methods = Vec::new();
    for m in a.methods {
        if seen.insert(m) {
            methods.push(m);
        } else {
            log::warn!("method {} listed more than once; running it once", m.name());
        }
    }
    let problem = load(&a.problem, &a.solver)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| Failure::internal(e.to_string()))?;
    let start = Instant::now();
    let reports: Vec<Result<SolveReport, Failure>> = pool.install(|| {
        methods
            .par_iter()
            .map(|&m| {
                let mut solver = a.solver.clone();
                if m != Method::Pgd {
                    solver.step_fraction = None;
                }
                let report = methods::run_method(&problem, m, &solver, &a.reweight)?;
                write_report(&a.out.join(m.name()), &report)?;
                Ok(report)
            })
            .collect()
    });
    let reports = reports.into_iter().collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<CompareRow> = reports.iter().map(CompareRow::new).collect();
    write_atomic(&a.out.join("comparison.json"), &json_bytes(&rows)?)?;
    write_atomic(&a.out.join("comparison.csv"), &compare_csv(&rows)?)?;
    println!("{:<14} {:>20} {:>8} {:>14} {:>9}  met", "method", "status", "iters", "objective", "seconds");
    for r in &rows {
        println!(
            "{:<14} {:>20} {:>8} {:>14.6} {:>9.3}  {}",
            r.method,
            format!("{:?}", r.status),
            r.iterations,
            r.objective_p1,
            r.seconds,
            r.all_met
        );
    }
    log::info!("compare finished in {:.2}s", start.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Phantom(a) => cmd_phantom(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Reweight(a) => cmd_reweight(a),
        Command::Polish(a) => cmd_polish(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("fmo: {f}");
            ExitCode::from(f.code)
        }
    }
}
