//! Problem instances: structures, dose matrices, prescriptions and
//! dose-volume constraints, plus their validation.
//!
//! The joint objective over fluence `x >= 0` and auxiliary doses `w` is
//!
//! ```text
//! sum_i a_i/(2 n_i) ||A_i x - d_i||^2
//!   + sum_j a_j/(2 n_j) ||w_j - r_j(x)||^2 + lambda/2 ||x||^2
//! ```
//!
//! where `r_j(x) = A_j x - d_j` for upper constraints and `d_j - A_j x` for
//! lower constraints, and each `w_j` may have at most `cap(n_j, p_j)`
//! positive entries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::matrix::{DoseMatrix, MatrixError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },
    #[error("non-positive weight: {0}")]
    NonPositiveWeight(String),
    #[error("negative matrix entry {value} in {structure} at ({row}, {col})")]
    NegativeMatrixEntry {
        structure: String,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("structure {0:?} has no voxels")]
    EmptyStructure(String),
    #[error("invalid dose-volume constraint on {structure}: {reason}")]
    InvalidConstraint { structure: String, reason: String },
    #[error("invalid prescription for {structure}: {reason}")]
    InvalidPrescription { structure: String, reason: String },
    #[error("invalid voxel ids for {structure}: {reason}")]
    InvalidVoxelIds { structure: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StructureKind {
    #[serde(rename = "PTV")]
    Ptv,
    #[serde(rename = "OAR")]
    Oar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureSpec {
    pub name: String,
    pub kind: StructureKind,
    pub voxel_count: usize,
    /// Indices into the patient grid. Empty when only counts are known.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub voxel_ids: Vec<usize>,
}

impl StructureSpec {
    pub fn new(name: impl Into<String>, kind: StructureKind, voxel_count: usize) -> Self {
        Self {
            name: name.into(),
            kind,
            voxel_count,
            voxel_ids: Vec::new(),
        }
    }

    pub fn with_voxel_ids(mut self, ids: Vec<usize>) -> Self {
        self.voxel_ids = ids;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// At most `p`% of voxels strictly exceed the threshold.
    Upper,
    /// At most `p`% of voxels receive strictly less than the threshold.
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseVolumeConstraint {
    pub direction: Direction,
    /// Threshold dose in Gy.
    pub dose: f64,
    /// Percent of the structure volume allowed to violate, in `[0, 100]`.
    pub percent: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    1.0
}

impl DoseVolumeConstraint {
    pub fn upper(dose: f64, percent: f64) -> Self {
        Self {
            direction: Direction::Upper,
            dose,
            percent,
            alpha: 1.0,
        }
    }

    pub fn lower(dose: f64, percent: f64) -> Self {
        Self {
            direction: Direction::Lower,
            dose,
            percent,
            alpha: 1.0,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    /// Maximum number of violating voxels for a structure of `n` voxels.
    pub fn cap(&self, n: usize) -> usize {
        cap(n, self.percent)
    }

    /// Number of voxels strictly violating the threshold.
    pub fn violation_count(&self, dose: &[f64]) -> usize {
        match self.direction {
            Direction::Upper => dose.iter().filter(|&&v| v > self.dose).count(),
            Direction::Lower => dose.iter().filter(|&&v| v < self.dose).count(),
        }
    }

    /// Short human-readable description, e.g. `Rectum >30Gy <=30%`.
    pub fn label(&self, structure: &str) -> String {
        let op = match self.direction {
            Direction::Upper => '>',
            Direction::Lower => '<',
        };
        format!("{structure} {op}{}Gy <={}%", self.dose, self.percent)
    }
}

/// Maximum violating-voxel count `floor(n p / 100)`.
///
/// Equivalently `n - ceil((100 - p) n / 100)`. A relative nudge of `1e-9`
/// absorbs rounding in `n * p` for percents that are not exact binary
/// fractions.
pub fn cap(n: usize, percent: f64) -> usize {
    debug_assert!((0.0..=100.0).contains(&percent));
    let raw = n as f64 * percent / 100.0;
    let k = (raw + 1e-9 * raw.max(1.0)).floor() as usize;
    k.min(n)
}

/// Uniform or per-voxel prescription for a target structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetObjective {
    /// Prescribed dose per voxel in Gy. A single value is broadcast to every
    /// voxel during validation.
    pub dose: Vec<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl TargetObjective {
    pub fn uniform(dose: f64, alpha: f64) -> Self {
        Self {
            dose: vec![dose],
            alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub structure: StructureSpec,
    pub matrix: DoseMatrix,
    pub objective: TargetObjective,
    /// Dose-volume constraints placed on the target itself.
    pub constraints: Vec<DoseVolumeConstraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Organ {
    pub structure: StructureSpec,
    pub matrix: DoseMatrix,
    pub constraints: Vec<DoseVolumeConstraint>,
}

/// Index of a structure within a [`ProblemSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StructureRef {
    Target(usize),
    Organ(usize),
}

/// Index of a dose-volume constraint: its structure and its position in
/// that structure's constraint list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConstraintId {
    pub structure: StructureRef,
    pub index: usize,
}

/// A complete fluence map optimization instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub targets: Vec<Target>,
    pub organs: Vec<Organ>,
    /// Ridge weight on the fluence.
    pub lambda: f64,
    /// Number of beamlets (matrix column count).
    pub beamlets: usize,
}

impl ProblemSpec {
    /// Assembles and validates a problem; the beamlet count is taken from the
    /// first matrix.
    pub fn new(targets: Vec<Target>, organs: Vec<Organ>, lambda: f64) -> Result<Self, ModelError> {
        let beamlets = targets
            .iter()
            .map(|t| t.matrix.cols())
            .chain(organs.iter().map(|o| o.matrix.cols()))
            .next()
            .unwrap_or(0);
        Self {
            targets,
            organs,
            lambda,
            beamlets,
        }
        .validate()
    }

    /// Checks every invariant and broadcasts scalar prescriptions. Returns
    /// the instance unchanged (apart from broadcasting) when valid, so
    /// validation is idempotent.
    pub fn validate(mut self) -> Result<Self, ModelError> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(ModelError::NonPositiveWeight(format!("lambda = {}", self.lambda)));
        }
        let m = self.beamlets;
        for t in &mut self.targets {
            check_structure(&t.structure, &t.matrix, m)?;
            let n = t.structure.voxel_count;
            let name = &t.structure.name;
            if !(t.objective.alpha > 0.0) || !t.objective.alpha.is_finite() {
                return Err(ModelError::NonPositiveWeight(format!(
                    "alpha = {} for target {name}",
                    t.objective.alpha
                )));
            }
            match t.objective.dose.len() {
                1 if n > 1 => t.objective.dose = vec![t.objective.dose[0]; n],
                len if len == n => {}
                len => {
                    return Err(ModelError::InvalidPrescription {
                        structure: name.clone(),
                        reason: format!("{len} doses for {n} voxels"),
                    })
                }
            }
            if let Some(bad) = t.objective.dose.iter().find(|&&d| !(d > 0.0) || !d.is_finite()) {
                return Err(ModelError::InvalidPrescription {
                    structure: name.clone(),
                    reason: format!("dose {bad} is not positive"),
                });
            }
            for c in &t.constraints {
                check_constraint(name, c)?;
            }
        }
        for o in &self.organs {
            check_structure(&o.structure, &o.matrix, m)?;
            for c in &o.constraints {
                check_constraint(&o.structure.name, c)?;
            }
        }
        Ok(self)
    }

    pub fn structure(&self, r: StructureRef) -> (&StructureSpec, &DoseMatrix) {
        match r {
            StructureRef::Target(i) => (&self.targets[i].structure, &self.targets[i].matrix),
            StructureRef::Organ(j) => (&self.organs[j].structure, &self.organs[j].matrix),
        }
    }

    pub fn constraints_of(&self, r: StructureRef) -> &[DoseVolumeConstraint] {
        match r {
            StructureRef::Target(i) => &self.targets[i].constraints,
            StructureRef::Organ(j) => &self.organs[j].constraints,
        }
    }

    pub fn constraint(&self, id: ConstraintId) -> &DoseVolumeConstraint {
        &self.constraints_of(id.structure)[id.index]
    }

    pub fn constraint_mut(&mut self, id: ConstraintId) -> &mut DoseVolumeConstraint {
        match id.structure {
            StructureRef::Target(i) => &mut self.targets[i].constraints[id.index],
            StructureRef::Organ(j) => &mut self.organs[j].constraints[id.index],
        }
    }

    /// Every structure, targets first.
    pub fn structure_refs(&self) -> Vec<StructureRef> {
        (0..self.targets.len())
            .map(StructureRef::Target)
            .chain((0..self.organs.len()).map(StructureRef::Organ))
            .collect()
    }

    /// Every dose-volume constraint in canonical order: target constraints
    /// first, then organ constraints, each in list order.
    pub fn constraint_ids(&self) -> Vec<ConstraintId> {
        self.structure_refs()
            .into_iter()
            .flat_map(|s| {
                (0..self.constraints_of(s).len()).map(move |index| ConstraintId { structure: s, index })
            })
            .collect()
    }

    pub fn constraint_label(&self, id: ConstraintId) -> String {
        let (s, _) = self.structure(id.structure);
        self.constraint(id).label(&s.name)
    }

    /// Dose delivered to a structure by fluence `x`.
    pub fn dose(&self, r: StructureRef, x: &[f64]) -> Vec<f64> {
        self.structure(r).1.mul_vec(x)
    }
}

fn check_structure(s: &StructureSpec, a: &DoseMatrix, beamlets: usize) -> Result<(), ModelError> {
    if s.voxel_count == 0 {
        return Err(ModelError::EmptyStructure(s.name.clone()));
    }
    if a.cols() != beamlets {
        return Err(ModelError::DimensionMismatch {
            context: format!("beamlet count of {}", s.name),
            expected: beamlets,
            found: a.cols(),
        });
    }
    if a.rows() != s.voxel_count {
        return Err(ModelError::DimensionMismatch {
            context: format!("voxel count of {}", s.name),
            expected: s.voxel_count,
            found: a.rows(),
        });
    }
    if let Some((row, col, value)) = a.triplets().find(|&(_, _, v)| !(v >= 0.0)) {
        return Err(ModelError::NegativeMatrixEntry {
            structure: s.name.clone(),
            row,
            col,
            value,
        });
    }
    if !s.voxel_ids.is_empty() {
        if s.voxel_ids.len() != s.voxel_count {
            return Err(ModelError::InvalidVoxelIds {
                structure: s.name.clone(),
                reason: format!("{} ids for {} voxels", s.voxel_ids.len(), s.voxel_count),
            });
        }
        let mut sorted = s.voxel_ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(ModelError::InvalidVoxelIds {
                structure: s.name.clone(),
                reason: "duplicate voxel id".into(),
            });
        }
    }
    Ok(())
}

fn check_constraint(structure: &str, c: &DoseVolumeConstraint) -> Result<(), ModelError> {
    let invalid = |reason: String| ModelError::InvalidConstraint {
        structure: structure.to_string(),
        reason,
    };
    if !(c.dose >= 0.0) || !c.dose.is_finite() {
        return Err(invalid(format!("threshold dose {} must be >= 0", c.dose)));
    }
    if !(0.0..=100.0).contains(&c.percent) {
        return Err(invalid(format!("percent {} outside [0, 100]", c.percent)));
    }
    if !(c.alpha > 0.0) || !c.alpha.is_finite() {
        return Err(ModelError::NonPositiveWeight(format!(
            "alpha = {} for constraint on {structure}",
            c.alpha
        )));
    }
    Ok(())
}
