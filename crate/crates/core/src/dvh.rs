//! Cumulative dose-volume histograms and scalar dose metrics.
//!
//! Curves use "receives at least" semantics; [`percent_above`] and
//! [`percent_below`] use strict inequalities, matching how constraint
//! violations are counted.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_GRID_POINTS: usize = 512;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DvhError {
    #[error("dose vector is empty")]
    EmptyDose,
    #[error("quantile {0} outside (0, 100]")]
    InvalidQuantile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DvhPoint {
    pub dose: f64,
    pub percent: f64,
}

/// Percent volume receiving at least each grid dose.
pub fn dvh_curve(dose: &[f64], grid: &[f64]) -> Result<Vec<DvhPoint>, DvhError> {
    if dose.is_empty() {
        return Err(DvhError::EmptyDose);
    }
    let mut sorted = dose.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(grid
        .iter()
        .map(|&d| {
            let below = sorted.partition_point(|&v| v < d);
            DvhPoint {
                dose: d,
                percent: 100.0 * (sorted.len() - below) as f64 / n,
            }
        })
        .collect())
}

/// `points` evenly spaced samples on `[0, 1.1 max(dose)]`.
pub fn default_grid(dose: &[f64], points: usize) -> Vec<f64> {
    let top = 1.1 * dose.iter().copied().fold(0.0, f64::max);
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points)
            .map(|i| top * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// `dvh_curve` on the default grid.
pub fn dvh_default(dose: &[f64]) -> Result<Vec<DvhPoint>, DvhError> {
    dvh_curve(dose, &default_grid(dose, DEFAULT_GRID_POINTS))
}

/// Largest dose received by at least `q` percent of voxels: the
/// `ceil(q n / 100)`-th largest entry.
pub fn d_quantile(dose: &[f64], q: f64) -> Result<f64, DvhError> {
    if dose.is_empty() {
        return Err(DvhError::EmptyDose);
    }
    if !(q > 0.0 && q <= 100.0) {
        return Err(DvhError::InvalidQuantile(q.to_string()));
    }
    let n = dose.len();
    let raw = q * n as f64 / 100.0;
    let rank = ((raw - 1e-9 * raw.max(1.0)).ceil() as usize).clamp(1, n);
    let mut sorted = dose.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted[rank - 1])
}

pub fn d95(dose: &[f64]) -> Result<f64, DvhError> {
    d_quantile(dose, 95.0)
}

/// Percent of voxels strictly above `level`.
pub fn percent_above(dose: &[f64], level: f64) -> Result<f64, DvhError> {
    if dose.is_empty() {
        return Err(DvhError::EmptyDose);
    }
    let count = dose.iter().filter(|&&v| v > level).count();
    Ok(100.0 * count as f64 / dose.len() as f64)
}

/// Percent of voxels strictly below `level`.
pub fn percent_below(dose: &[f64], level: f64) -> Result<f64, DvhError> {
    if dose.is_empty() {
        return Err(DvhError::EmptyDose);
    }
    let count = dose.iter().filter(|&&v| v < level).count();
    Ok(100.0 * count as f64 / dose.len() as f64)
}
