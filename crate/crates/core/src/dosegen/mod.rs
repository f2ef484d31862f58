//! Synthetic 2-D phantoms with a pencil-beam dose model, and the on-disk
//! interchange formats for dose matrices and problem instances.

mod io;

pub use io::{load_dose_matrix, load_problem, parse_dose_matrix, save_dose_matrix, save_problem, write_dose_matrix, SCHEMA_VERSION};

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{DoseMatrix, MatrixError};
use crate::model::{
    DoseVolumeConstraint, ModelError, Organ, ProblemSpec, StructureKind, StructureSpec, Target, TargetObjective,
};

#[derive(Debug, Error)]
pub enum DosegenError {
    #[error("region of {structure} leaves the grid: {reason}")]
    RegionOutOfGrid { structure: String, reason: String },
    #[error("invalid phantom: {0}")]
    InvalidSpec(String),
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    IoError {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported problem schema {found:?}, expected {expected:?}")]
    SchemaVersionMismatch { found: String, expected: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// Voxels whose centers lie within `radius` of `center`.
    Disk { center: [f64; 2], radius: f64 },
    /// Voxels whose centers lie in the axis-aligned box.
    Rectangle { center: [f64; 2], size: [f64; 2] },
    /// Explicit grid indices `iy * nx + ix`.
    Voxels { ids: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomStructure {
    pub name: String,
    pub kind: StructureKind,
    pub region: Region,
    /// Prescribed dose for targets, in Gy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prescription: Option<f64>,
    /// Weight of the target term; organs carry weights on their constraints.
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default)]
    pub constraints: Vec<DoseVolumeConstraint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub grid: [usize; 2],
    pub structures: Vec<PhantomStructure>,
    /// Degrees; 0 irradiates from the top edge, angles increase clockwise.
    pub beam_angles: Vec<f64>,
    pub beamlets_per_beam: usize,
    /// Lateral distance between neighbouring beamlets, in voxels.
    #[serde(default = "one")]
    pub beamlet_spacing: f64,
    #[serde(default = "default_mu")]
    pub attenuation_mu: f64,
    #[serde(default = "one")]
    pub lateral_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

fn one() -> f64 {
    1.0
}

fn default_mu() -> f64 {
    0.05
}

fn default_lambda() -> f64 {
    1e-8
}

/// Entries below this fraction of their beamlet's maximum are dropped.
pub const DROP_TOLERANCE: f64 = 1e-4;

impl PhantomSpec {
    pub fn voxel_count(&self) -> usize {
        self.grid[0] * self.grid[1]
    }

    pub fn beamlets(&self) -> usize {
        self.beam_angles.len() * self.beamlets_per_beam
    }

    fn validate(&self) -> Result<(), DosegenError> {
        let [nx, ny] = self.grid;
        if nx == 0 || ny == 0 {
            return Err(DosegenError::InvalidSpec("grid must be non-empty".into()));
        }
        if self.beam_angles.is_empty() || self.beamlets_per_beam == 0 {
            return Err(DosegenError::InvalidSpec("need at least one beam and one beamlet".into()));
        }
        if !(self.attenuation_mu >= 0.0) || !(self.lateral_sigma > 0.0) || !(self.beamlet_spacing > 0.0) {
            return Err(DosegenError::InvalidSpec(
                "attenuation must be >= 0, lateral sigma and spacing > 0".into(),
            ));
        }
        for s in &self.structures {
            let out = |reason: String| DosegenError::RegionOutOfGrid {
                structure: s.name.clone(),
                reason,
            };
            let (w, h) = (nx as f64, ny as f64);
            match &s.region {
                Region::Disk { center: [cx, cy], radius } => {
                    if !(*radius > 0.0) {
                        return Err(DosegenError::InvalidSpec(format!("{}: radius must be positive", s.name)));
                    }
                    if cx - radius < 0.0 || cy - radius < 0.0 || cx + radius > w || cy + radius > h {
                        return Err(out(format!("disk at ({cx}, {cy}) radius {radius} on a {nx}x{ny} grid")));
                    }
                }
                Region::Rectangle {
                    center: [cx, cy],
                    size: [sx, sy],
                } => {
                    if !(*sx > 0.0 && *sy > 0.0) {
                        return Err(DosegenError::InvalidSpec(format!("{}: size must be positive", s.name)));
                    }
                    if cx - sx / 2.0 < 0.0 || cy - sy / 2.0 < 0.0 || cx + sx / 2.0 > w || cy + sy / 2.0 > h {
                        return Err(out(format!("rectangle at ({cx}, {cy}) size {sx}x{sy} on a {nx}x{ny} grid")));
                    }
                }
                Region::Voxels { ids } => {
                    if let Some(id) = ids.iter().find(|&&i| i >= nx * ny) {
                        return Err(out(format!("voxel {id} beyond {} voxels", nx * ny)));
                    }
                }
            }
        }
        Ok(())
    }

    fn center(&self, id: usize) -> [f64; 2] {
        let nx = self.grid[0];
        [(id % nx) as f64 + 0.5, (id / nx) as f64 + 0.5]
    }

    fn contains(&self, region: &Region, id: usize) -> bool {
        let [px, py] = self.center(id);
        match region {
            Region::Disk { center: [cx, cy], radius } => (px - cx).powi(2) + (py - cy).powi(2) <= radius * radius,
            Region::Rectangle {
                center: [cx, cy],
                size: [sx, sy],
            } => (px - cx).abs() <= sx / 2.0 && (py - cy).abs() <= sy / 2.0,
            Region::Voxels { ids } => ids.contains(&id),
        }
    }

    /// Grid voxels of each structure. Targets claim shared voxels first, then
    /// structures in listed order.
    pub fn assign_voxels(&self) -> Result<Vec<Vec<usize>>, DosegenError> {
        self.validate()?;
        let mut owner = vec![usize::MAX; self.voxel_count()];
        let order = (0..self.structures.len())
            .filter(|&s| self.structures[s].kind == StructureKind::Ptv)
            .chain((0..self.structures.len()).filter(|&s| self.structures[s].kind == StructureKind::Oar));
        for s in order {
            for (id, o) in owner.iter_mut().enumerate() {
                if *o == usize::MAX && self.contains(&self.structures[s].region, id) {
                    *o = s;
                }
            }
        }
        let mut out = vec![Vec::new(); self.structures.len()];
        for (id, &o) in owner.iter().enumerate() {
            if o != usize::MAX {
                out[o].push(id);
            }
        }
        Ok(out)
    }

    /// Pencil-beam kernel of every beamlet at every grid voxel, as a
    /// `voxels x beamlets` matrix.
    pub fn full_matrix(&self) -> Result<DoseMatrix, DosegenError> {
        self.validate()?;
        let [nx, ny] = self.grid;
        let (w, h) = (nx as f64, ny as f64);
        let c = [w / 2.0, h / 2.0];
        let nb = self.beamlets_per_beam;
        let two_s2 = 2.0 * self.lateral_sigma * self.lateral_sigma;
        let mut entries = Vec::new();
        for (beam, &angle) in self.beam_angles.iter().enumerate() {
            let th = angle * PI / 180.0;
            let dir = [th.sin(), -th.cos()];
            let lat = [th.cos(), th.sin()];
            for b in 0..nb {
                let col = beam * nb + b;
                let offset = (b as f64 - (nb as f64 - 1.0) / 2.0) * self.beamlet_spacing;
                let column: Vec<(usize, f64)> = (0..self.voxel_count())
                    .map(|id| {
                        let p = self.center(id);
                        let r = (p[0] - c[0]) * lat[0] + (p[1] - c[1]) * lat[1] - offset;
                        let depth = entry_depth(p, dir, w, h);
                        (id, (-self.attenuation_mu * depth).exp() * (-r * r / two_s2).exp())
                    })
                    .collect();
                let max = column.iter().map(|e| e.1).fold(0.0, f64::max);
                entries.extend(
                    column
                        .into_iter()
                        .filter(|&(_, v)| v > 0.0 && v >= DROP_TOLERANCE * max)
                        .map(|(id, v)| (id, col, v)),
                );
            }
        }
        Ok(DoseMatrix::from_triplets(self.voxel_count(), self.beamlets(), entries)?)
    }
}

/// Distance travelled inside the grid by a ray moving along `dir` before
/// reaching `p`.
fn entry_depth(p: [f64; 2], dir: [f64; 2], w: f64, h: f64) -> f64 {
    let mut t = f64::INFINITY;
    for (axis, extent) in [(0, w), (1, h)] {
        let d = dir[axis];
        if d > 1e-12 {
            t = t.min(p[axis] / d);
        } else if d < -1e-12 {
            t = t.min((extent - p[axis]) / -d);
        }
    }
    t
}

/// Builds the problem: one matrix per structure, rows in grid order.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<ProblemSpec, DosegenError> {
    let voxels = spec.assign_voxels()?;
    let full = spec.full_matrix()?;
    let mut targets = Vec::new();
    let mut organs = Vec::new();
    for (s, ids) in spec.structures.iter().zip(voxels) {
        if ids.is_empty() {
            return Err(ModelError::EmptyStructure(s.name.clone()).into());
        }
        let rows: Vec<(usize, usize, f64)> = ids
            .iter()
            .enumerate()
            .flat_map(|(r, &id)| full.row(id).map(move |(j, v)| (r, j, v)))
            .collect();
        let matrix = DoseMatrix::from_triplets(ids.len(), spec.beamlets(), rows)?;
        let structure = StructureSpec::new(s.name.clone(), s.kind, ids.len()).with_voxel_ids(ids);
        match s.kind {
            StructureKind::Ptv => {
                let dose = s.prescription.ok_or_else(|| {
                    DosegenError::InvalidSpec(format!("target {} needs a prescription", s.name))
                })?;
                targets.push(Target {
                    structure,
                    matrix,
                    objective: TargetObjective::uniform(dose, s.alpha),
                    constraints: s.constraints.clone(),
                });
            }
            StructureKind::Oar => organs.push(Organ {
                structure,
                matrix,
                constraints: s.constraints.clone(),
            }),
        }
    }
    Ok(ProblemSpec::new(targets, organs, spec.lambda)?)
}

/// `count` beams at `step` degree increments from 0.
pub fn equispaced_angles(count: usize, step: f64) -> Vec<f64> {
    (0..count).map(|k| k as f64 * step).collect()
}

/// Central target disk with an organ disk touching it from below.
pub fn prostate_phantom() -> PhantomSpec {
    PhantomSpec {
        grid: [20, 20],
        structures: vec![
            PhantomStructure {
                name: "PTV".into(),
                kind: StructureKind::Ptv,
                region: Region::Disk {
                    center: [10.0, 9.0],
                    radius: 4.0,
                },
                prescription: Some(81.0),
                alpha: 1.0,
                constraints: vec![],
            },
            PhantomStructure {
                name: "rectum".into(),
                kind: StructureKind::Oar,
                region: Region::Disk {
                    center: [10.0, 15.0],
                    radius: 3.0,
                },
                prescription: None,
                alpha: 1.0,
                constraints: vec![DoseVolumeConstraint::upper(50.0, 30.0)],
            },
        ],
        beam_angles: equispaced_angles(7, 52.0),
        beamlets_per_beam: 9,
        beamlet_spacing: 1.0,
        attenuation_mu: 0.05,
        lateral_sigma: 1.0,
        seed: 0,
        lambda: 1e-8,
    }
}

/// Two beamlets, one target voxel and two organ voxels of which at most one
/// may exceed 20 Gy. Each choice of the exceeding voxel gives its own local
/// minimum.
pub fn toy_phantom() -> PhantomSpec {
    PhantomSpec {
        grid: [5, 5],
        structures: vec![
            PhantomStructure {
                name: "prostate".into(),
                kind: StructureKind::Ptv,
                region: Region::Voxels { ids: vec![12] },
                prescription: Some(81.0),
                alpha: 1.0,
                constraints: vec![],
            },
            PhantomStructure {
                name: "rectum".into(),
                kind: StructureKind::Oar,
                region: Region::Voxels { ids: vec![11, 18] },
                prescription: None,
                alpha: 1.0,
                constraints: vec![DoseVolumeConstraint::upper(20.0, 50.0).with_alpha(10.0)],
            },
        ],
        beam_angles: vec![0.0, 90.0],
        beamlets_per_beam: 1,
        beamlet_spacing: 1.0,
        attenuation_mu: 0.05,
        lateral_sigma: 1.0,
        seed: 0,
        lambda: 5e-6,
    }
}

/// A small random instance: target disk, an organ disk next to it with an
/// upper constraint, on a 16x16 grid with seven beams.
pub fn random_phantom(seed: u64) -> PhantomSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r_ptv = rng.random_range(2.5..3.5);
    let ptv = [rng.random_range(7.0..9.0), rng.random_range(7.0..9.0)];
    let phi = rng.random_range(0.0..2.0 * PI);
    let r_oar = rng.random_range(1.8..2.6);
    let gap = r_ptv + r_oar - rng.random_range(0.0..1.0);
    let oar = [(ptv[0] + gap * phi.cos()).clamp(r_oar, 16.0 - r_oar), (ptv[1] + gap * phi.sin()).clamp(r_oar, 16.0 - r_oar)];
    PhantomSpec {
        grid: [16, 16],
        structures: vec![
            PhantomStructure {
                name: "PTV".into(),
                kind: StructureKind::Ptv,
                region: Region::Disk {
                    center: ptv,
                    radius: r_ptv,
                },
                prescription: Some(81.0),
                alpha: 1.0,
                constraints: vec![],
            },
            PhantomStructure {
                name: "OAR".into(),
                kind: StructureKind::Oar,
                region: Region::Disk {
                    center: oar,
                    radius: r_oar,
                },
                prescription: None,
                alpha: 1.0,
                constraints: vec![DoseVolumeConstraint::upper(
                    rng.random_range(20.0..40.0),
                    rng.random_range(10.0..30.0),
                )],
            },
        ],
        beam_angles: equispaced_angles(7, 52.0),
        beamlets_per_beam: 7,
        beamlet_spacing: 1.0,
        attenuation_mu: 0.05,
        lateral_sigma: 1.0,
        seed,
        lambda: 1e-8,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn symmetric(angles: Vec<f64>) -> PhantomSpec {
        PhantomSpec {
            grid: [10, 10],
            structures: vec![
                PhantomStructure {
                    name: "PTV".into(),
                    kind: StructureKind::Ptv,
                    region: Region::Disk {
                        center: [5.0, 5.0],
                        radius: 2.0,
                    },
                    prescription: Some(60.0),
                    alpha: 1.0,
                    constraints: vec![],
                },
                PhantomStructure {
                    name: "ring".into(),
                    kind: StructureKind::Oar,
                    region: Region::Disk {
                        center: [5.0, 5.0],
                        radius: 4.0,
                    },
                    prescription: None,
                    alpha: 1.0,
                    constraints: vec![],
                },
            ],
            beam_angles: angles,
            beamlets_per_beam: 5,
            beamlet_spacing: 1.0,
            attenuation_mu: 0.05,
            lateral_sigma: 1.0,
            seed: 0,
            lambda: 1e-8,
        }
    }

    #[test]
    fn opposed_beams_mirror() {
        let spec = symmetric(vec![0.0, 180.0]);
        let a = spec.full_matrix().unwrap().to_dense();
        let (nx, ny, nb) = (10, 10, 5);
        // Mirroring y swaps the beams and reverses the lateral order.
        for iy in 0..ny {
            for ix in 0..nx {
                let id = iy * nx + ix;
                let mirror = (ny - 1 - iy) * nx + ix;
                for b in 0..nb {
                    assert!((a[id][b] - a[mirror][nb + nb - 1 - b]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn quarter_turn_permutes_voxels() {
        let a = symmetric(vec![0.0]).full_matrix().unwrap().to_dense();
        let b = symmetric(vec![90.0]).full_matrix().unwrap().to_dense();
        let n = 10;
        for iy in 0..n {
            for ix in 0..n {
                // Rotating the grid clockwise by 90 degrees about its center.
                let (rx, ry) = (n - 1 - iy, ix);
                for k in 0..5 {
                    assert!((a[iy * n + ix][k] - b[ry * n + rx][k]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn no_attenuation_wide_beam_is_flat() {
        let mut spec = symmetric(vec![0.0]);
        spec.attenuation_mu = 0.0;
        spec.lateral_sigma = 1e6;
        spec.beamlets_per_beam = 1;
        let a = spec.full_matrix().unwrap();
        for (_, _, v) in a.triplets() {
            assert!((v - 1.0).abs() < 1e-9);
        }
        assert_eq!(a.nnz(), 100);
    }

    #[test]
    fn seven_beams_cover_every_beamlet() {
        let p = generate_phantom(&prostate_phantom()).unwrap();
        assert_eq!(p.beamlets, 63);
        let mut hit = vec![false; p.beamlets];
        for m in p.targets.iter().map(|t| &t.matrix).chain(p.organs.iter().map(|o| &o.matrix)) {
            for (_, j, v) in m.triplets() {
                assert!(v >= 0.0 && v <= 1.0);
                hit[j] = true;
            }
        }
        assert!(hit.iter().all(|&h| h));
    }

    #[test]
    fn target_claims_overlap() {
        let spec = symmetric(vec![0.0]);
        let v = spec.assign_voxels().unwrap();
        assert!(v[0].iter().all(|id| !v[1].contains(id)));
        assert!(v[0].contains(&55));
    }

    #[test]
    fn off_grid_region_is_rejected() {
        let mut spec = symmetric(vec![0.0]);
        spec.structures[1].region = Region::Disk {
            center: [9.0, 5.0],
            radius: 3.0,
        };
        assert!(matches!(generate_phantom(&spec), Err(DosegenError::RegionOutOfGrid { .. })));
        spec.structures[1].region = Region::Voxels { ids: vec![100] };
        assert!(matches!(generate_phantom(&spec), Err(DosegenError::RegionOutOfGrid { .. })));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_phantom(&random_phantom(3)).unwrap();
        let b = generate_phantom(&random_phantom(3)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn random_phantoms_are_valid(seed in 0u64..1000) {
            let p = generate_phantom(&random_phantom(seed)).unwrap();
            prop_assert_eq!(p.beamlets, 49);
            prop_assert!(p.organs[0].structure.voxel_count > 0);
        }
    }
}
