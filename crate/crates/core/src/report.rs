//! Solve reports and their CSV exports.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dvh::{self, DvhPoint};
use crate::model::{ConstraintId, Direction, ProblemSpec, StructureKind, StructureRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxItersExceeded,
    Infeasible,
}

/// One row of an iterate trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub g: f64,
    /// Absent before the first update.
    pub err: Option<f64>,
    /// Strict violation counts per constraint, in canonical order.
    pub violations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub id: ConstraintId,
    pub label: String,
    pub direction: Direction,
    pub dose: f64,
    pub percent: f64,
    pub cap: usize,
    pub violation_count: usize,
    pub percent_violating: f64,
    pub satisfied: bool,
}

/// Counts strict violations of every constraint of `problem` at `x`.
pub fn check_constraints(problem: &ProblemSpec, x: &[f64]) -> Vec<ConstraintCheck> {
    problem
        .constraint_ids()
        .into_iter()
        .map(|id| {
            let dose = problem.dose(id.structure, x);
            let c = problem.constraint(id);
            let n = dose.len();
            let count = c.violation_count(&dose);
            let cap = c.cap(n);
            ConstraintCheck {
                id,
                label: problem.constraint_label(id),
                direction: c.direction,
                dose: c.dose,
                percent: c.percent,
                cap,
                violation_count: count,
                percent_violating: 100.0 * count as f64 / n as f64,
                satisfied: count <= cap,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureMetrics {
    pub name: String,
    pub kind: StructureKind,
    pub d95: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub dose: Vec<f64>,
    pub dvh: Vec<DvhPoint>,
}

pub fn structure_metrics(problem: &ProblemSpec, x: &[f64]) -> Vec<StructureMetrics> {
    problem
        .structure_refs()
        .into_iter()
        .map(|r| {
            let (s, _) = problem.structure(r);
            let dose = problem.dose(r, x);
            let n = dose.len() as f64;
            StructureMetrics {
                name: s.name.clone(),
                kind: s.kind,
                d95: dvh::d95(&dose).unwrap_or(0.0),
                mean: dose.iter().sum::<f64>() / n,
                min: dose.iter().copied().fold(f64::INFINITY, f64::min),
                max: dose.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                dvh: dvh::dvh_default(&dose).unwrap_or_default(),
                dose,
            }
        })
        .collect()
}

/// D95 of every target at `x`.
pub fn target_d95(problem: &ProblemSpec, x: &[f64]) -> Vec<f64> {
    (0..problem.targets.len())
        .map(|i| dvh::d95(&problem.dose(StructureRef::Target(i), x)).unwrap_or(0.0))
        .collect()
}

/// Per-round parameters and outcomes of a re-weighting run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub alpha: Vec<f64>,
    pub dose: Vec<f64>,
    pub percent: Vec<f64>,
    pub violations: Vec<usize>,
    pub target_d95: Vec<f64>,
    pub g: f64,
    pub epsilon: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: String,
    pub status: SolveStatus,
    pub iterations: usize,
    pub fluence: Vec<f64>,
    pub g_history: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub structures: Vec<StructureMetrics>,
    pub constraints: Vec<ConstraintCheck>,
    pub objective_p1: f64,
    pub elapsed_seconds: f64,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rounds: Vec<RoundRecord>,
    /// Per-constraint residuals when polishing fails.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub residuals: Vec<f64>,
}

impl SolveReport {
    /// Report for fluence `x`, with metrics recomputed from the problem.
    pub fn new(problem: &ProblemSpec, method: &str, status: SolveStatus, x: Vec<f64>) -> Self {
        Self {
            method: method.to_string(),
            status,
            iterations: 0,
            g_history: Vec::new(),
            trace: Vec::new(),
            structures: structure_metrics(problem, &x),
            constraints: check_constraints(problem, &x),
            objective_p1: crate::baselines::objective_p1(problem, &x),
            elapsed_seconds: 0.0,
            config: serde_json::Value::Null,
            rounds: Vec::new(),
            residuals: Vec::new(),
            fluence: x,
        }
    }

    pub fn all_satisfied(&self) -> bool {
        self.constraints.iter().all(|c| c.satisfied)
    }

    pub fn write_trace_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["k".to_string(), "g".to_string(), "err".to_string()];
        header.extend(self.constraints.iter().map(|c| format!("violations[{}]", c.label)));
        w.write_record(&header)?;
        for row in &self.trace {
            let mut rec = vec![row.k.to_string(), row.g.to_string(), row.err.map(|e| e.to_string()).unwrap_or_default()];
            rec.extend(row.violations.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_dvh_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["structure", "dose_gy", "percent_volume"])?;
        for s in &self.structures {
            for p in &s.dvh {
                w.write_record([s.name.clone(), p.dose.to_string(), p.percent.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_rounds_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["round".to_string()];
        for c in &self.constraints {
            for field in ["alpha", "dose", "percent", "violations"] {
                header.push(format!("{field}[{}]", c.label));
            }
        }
        for s in self.structures.iter().filter(|s| s.kind == StructureKind::Ptv) {
            header.push(format!("d95[{}]", s.name));
        }
        header.extend(["g".to_string(), "epsilon".to_string(), "iterations".to_string()]);
        w.write_record(&header)?;
        for r in &self.rounds {
            let mut rec = vec![r.round.to_string()];
            for j in 0..r.alpha.len() {
                rec.push(r.alpha[j].to_string());
                rec.push(r.dose[j].to_string());
                rec.push(r.percent[j].to_string());
                rec.push(r.violations[j].to_string());
            }
            rec.extend(r.target_d95.iter().map(|v| v.to_string()));
            rec.push(r.g.to_string());
            rec.push(r.epsilon.to_string());
            rec.push(r.iterations.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
