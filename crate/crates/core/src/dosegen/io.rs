use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DosegenError;
use crate::matrix::DoseMatrix;
use crate::model::{DoseVolumeConstraint, Organ, ProblemSpec, StructureKind, StructureSpec, Target, TargetObjective};

pub const SCHEMA_VERSION: &str = "fmo-problem/1";
const MANIFEST: &str = "manifest.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DosegenError + '_ {
    move |source| DosegenError::IoError {
        path: path.display().to_string(),
        source,
    }
}

/// Parses the triplet text format: a `rows cols nnz` header, then `nnz`
/// lines of `row col value`. Lines starting with `#` and blank lines are
/// skipped; duplicate positions are summed.
pub fn parse_dose_matrix(text: &str) -> Result<DoseMatrix, DosegenError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hline, header) = lines.next().ok_or(DosegenError::ParseError {
        line: 0,
        message: "missing header".into(),
    })?;
    let dims = fields::<usize>(hline, header, 3)?;
    let (rows, cols, nnz) = (dims[0], dims[1], dims[2]);
    let mut entries = Vec::with_capacity(nnz);
    for (line, l) in lines {
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 3 {
            return Err(DosegenError::ParseError {
                line,
                message: format!("expected 3 fields, found {}", f.len()),
            });
        }
        let parse_idx = |s: &str| {
            s.parse::<usize>().map_err(|e| DosegenError::ParseError {
                line,
                message: format!("{s:?}: {e}"),
            })
        };
        let value = f[2].parse::<f64>().map_err(|e| DosegenError::ParseError {
            line,
            message: format!("{:?}: {e}", f[2]),
        })?;
        entries.push((parse_idx(f[0])?, parse_idx(f[1])?, value));
    }
    if entries.len() != nnz {
        return Err(DosegenError::ParseError {
            line: hline,
            message: format!("header announces {nnz} entries, found {}", entries.len()),
        });
    }
    Ok(DoseMatrix::from_triplets(rows, cols, entries)?)
}

fn fields<T: std::str::FromStr>(line: usize, l: &str, n: usize) -> Result<Vec<T>, DosegenError>
where
    T::Err: std::fmt::Display,
{
    let f: Vec<&str> = l.split_whitespace().collect();
    if f.len() != n {
        return Err(DosegenError::ParseError {
            line,
            message: format!("expected {n} fields, found {}", f.len()),
        });
    }
    f.iter()
        .map(|s| {
            s.parse::<T>().map_err(|e| DosegenError::ParseError {
                line,
                message: format!("{s:?}: {e}"),
            })
        })
        .collect()
}

pub fn load_dose_matrix(path: &Path) -> Result<DoseMatrix, DosegenError> {
    parse_dose_matrix(&fs::read_to_string(path).map_err(io_err(path))?)
}

/// Writes entries in row-major order with shortest round-trip formatting.
pub fn write_dose_matrix<W: Write>(m: &DoseMatrix, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{} {} {}", m.rows(), m.cols(), m.nnz())?;
    for (i, j, v) in m.triplets() {
        writeln!(out, "{i} {j} {v:?}")?;
    }
    Ok(())
}

pub fn save_dose_matrix(m: &DoseMatrix, path: &Path) -> Result<(), DosegenError> {
    let mut buf = Vec::new();
    write_dose_matrix(m, &mut buf).map_err(io_err(path))?;
    fs::write(path, buf).map_err(io_err(path))
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: String,
    lambda: f64,
    beamlets: usize,
    structures: Vec<ManifestStructure>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestStructure {
    #[serde(flatten)]
    spec: StructureSpec,
    matrix: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    objective: Option<TargetObjective>,
    #[serde(default)]
    constraints: Vec<DoseVolumeConstraint>,
}

fn file_name(index: usize, name: &str) -> String {
    let clean: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{index:02}_{clean}.txt")
}

/// Writes `manifest.json` and one triplet file per structure into `dir`.
pub fn save_problem(problem: &ProblemSpec, dir: &Path) -> Result<(), DosegenError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut structures = Vec::new();
    let all = problem
        .targets
        .iter()
        .map(|t| (&t.structure, &t.matrix, Some(&t.objective), &t.constraints))
        .chain(problem.organs.iter().map(|o| (&o.structure, &o.matrix, None, &o.constraints)));
    for (k, (s, m, obj, cons)) in all.enumerate() {
        let name = file_name(k, &s.name);
        save_dose_matrix(m, &dir.join(&name))?;
        structures.push(ManifestStructure {
            spec: s.clone(),
            matrix: name,
            objective: obj.cloned(),
            constraints: cons.clone(),
        });
    }
    let manifest = Manifest {
        version: SCHEMA_VERSION.into(),
        lambda: problem.lambda,
        beamlets: problem.beamlets,
        structures,
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&path))
}

pub fn load_problem(dir: &Path) -> Result<ProblemSpec, DosegenError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let version = value.get("version").and_then(|v| v.as_str()).unwrap_or("");
    if version != SCHEMA_VERSION {
        return Err(DosegenError::SchemaVersionMismatch {
            found: version.to_string(),
            expected: SCHEMA_VERSION.into(),
        });
    }
    let manifest: Manifest = serde_json::from_value(value)?;
    let mut targets = Vec::new();
    let mut organs = Vec::new();
    for s in manifest.structures {
        let matrix = load_dose_matrix(&dir.join(&s.matrix))?;
        match s.spec.kind {
            StructureKind::Ptv => targets.push(Target {
                objective: s.objective.ok_or_else(|| {
                    DosegenError::InvalidSpec(format!("target {} has no objective", s.spec.name))
                })?,
                structure: s.spec,
                matrix,
                constraints: s.constraints,
            }),
            StructureKind::Oar => organs.push(Organ {
                structure: s.spec,
                matrix,
                constraints: s.constraints,
            }),
        }
    }
    Ok(ProblemSpec {
        targets,
        organs,
        lambda: manifest.lambda,
        beamlets: manifest.beamlets,
    }
    .validate()?)
}
