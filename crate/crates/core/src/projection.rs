//! Projections onto dose-volume constraint sets.
//!
//! In residual space a constraint is the cardinality set
//! `{w : ||(w)_+||_0 <= k}`. In dose space several constraints on the same
//! structure combine into a union of boxes: each upper constraint allows at
//! most `k` entries above its level, each lower constraint at most `k`
//! entries below its level.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Direction;

/// Largest dimension accepted by [`project_oracle`].
pub const ORACLE_MAX_DIM: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("constraint {index} still has {count} violators after projection (cap {cap})")]
    ConflictingConstraints {
        index: usize,
        count: usize,
        cap: usize,
    },
    #[error("oracle limited to n <= {max}, got {n}")]
    DimensionTooLarge { n: usize, max: usize },
    #[error("dimension mismatch: set has n = {expected}, vector has {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CardinalitySet {
    pub n: usize,
    pub k: usize,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelConstraint {
    pub direction: Direction,
    pub dose: f64,
    pub cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedDoseSet {
    pub n: usize,
    pub constraints: Vec<LevelConstraint>,
}

impl CombinedDoseSet {
    pub fn contains(&self, y: &[f64]) -> bool {
        self.constraints.iter().all(|c| violations(y, c) <= c.cap)
    }
}

fn violations(y: &[f64], c: &LevelConstraint) -> usize {
    match c.direction {
        Direction::Upper => y.iter().filter(|&&v| v > c.dose).count(),
        Direction::Lower => y.iter().filter(|&&v| v < c.dose).count(),
    }
}

/// Indices ordered ascending by value, ties by index.
pub fn ascending_order(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    idx
}

/// In-place projection onto `{w : ||(w)_+||_0 <= k}`.
pub fn project_cardinality_in_place(w: &mut [f64], k: usize) {
    let n = w.len();
    if k >= n {
        return;
    }
    if w.iter().filter(|&&v| v > 0.0).count() <= k {
        return;
    }
    // Clamp the n - k lowest entries; ties at the boundary keep the lower index.
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    for &i in &idx[k..] {
        w[i] = w[i].min(0.0);
    }
}

pub fn project_upper(w: &[f64], k: usize) -> Vec<f64> {
    let mut out = w.to_vec();
    project_cardinality_in_place(&mut out, k);
    out
}

/// For lower constraints `w` holds `d - A x`, so the rule is the same as for
/// upper constraints.
pub fn project_lower(w: &[f64], k: usize) -> Vec<f64> {
    project_upper(w, k)
}

pub fn project_cardinality(w: &[f64], set: &CardinalitySet) -> Vec<f64> {
    match set.direction {
        Direction::Upper => project_upper(w, set.k),
        Direction::Lower => project_lower(w, set.k),
    }
}

/// Sequential sorting projection onto the intersection of several dose-space
/// constraints.
///
/// The ranks of `y` are computed once. Upper constraints are applied in
/// increasing dose order, clamping the `n - cap` lowest-ranked entries from
/// above; lower constraints follow in decreasing dose order, clamping the
/// `n - cap` highest-ranked entries from below.
pub fn project_combined(y: &[f64], set: &CombinedDoseSet) -> Result<Vec<f64>, ProjectionError> {
    if y.len() != set.n {
        return Err(ProjectionError::DimensionMismatch {
            expected: set.n,
            found: y.len(),
        });
    }
    let n = y.len();
    let order = ascending_order(y);
    let mut out = y.to_vec();

    let mut uppers: Vec<&LevelConstraint> =
        set.constraints.iter().filter(|c| c.direction == Direction::Upper).collect();
    uppers.sort_by(|a, b| a.dose.total_cmp(&b.dose));
    for c in uppers {
        if violations(&out, c) <= c.cap {
            continue;
        }
        for &i in &order[..n - c.cap.min(n)] {
            out[i] = out[i].min(c.dose);
        }
    }

    let mut lowers: Vec<&LevelConstraint> =
        set.constraints.iter().filter(|c| c.direction == Direction::Lower).collect();
    lowers.sort_by(|a, b| b.dose.total_cmp(&a.dose));
    for c in lowers {
        if violations(&out, c) <= c.cap {
            continue;
        }
        for &i in &order[c.cap.min(n)..] {
            out[i] = out[i].max(c.dose);
        }
    }

    for (index, c) in set.constraints.iter().enumerate() {
        let count = violations(&out, c);
        if count > c.cap {
            return Err(ProjectionError::ConflictingConstraints {
                index,
                count,
                cap: c.cap,
            });
        }
    }
    Ok(out)
}

/// Sets accepted by [`project_oracle`].
#[derive(Debug, Clone, PartialEq)]
pub enum ProjectionSet {
    Cardinality(CardinalitySet),
    Combined(CombinedDoseSet),
}

/// Exact nearest point by enumerating every admissible violation subset.
///
/// Each choice of subsets fixes a box; the candidate is the clamp of the
/// input into that box. The first subset (in lexicographic order) attaining
/// the smallest distance wins.
pub fn project_oracle(v: &[f64], set: &ProjectionSet) -> Result<Vec<f64>, ProjectionError> {
    let n = v.len();
    if n > ORACLE_MAX_DIM {
        return Err(ProjectionError::DimensionTooLarge {
            n,
            max: ORACLE_MAX_DIM,
        });
    }
    let combined = match set {
        ProjectionSet::Cardinality(c) => {
            if c.n != n {
                return Err(ProjectionError::DimensionMismatch {
                    expected: c.n,
                    found: n,
                });
            }
            // In residual space both directions are "at most k entries above 0".
            CombinedDoseSet {
                n,
                constraints: vec![LevelConstraint {
                    direction: Direction::Upper,
                    dose: 0.0,
                    cap: c.k,
                }],
            }
        }
        ProjectionSet::Combined(c) => {
            if c.n != n {
                return Err(ProjectionError::DimensionMismatch {
                    expected: c.n,
                    found: n,
                });
            }
            c.clone()
        }
    };

    let subsets: Vec<Vec<u32>> = combined
        .constraints
        .iter()
        .map(|c| subsets_of_size(n, c.cap.min(n)))
        .collect();

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut choice = vec![0usize; subsets.len()];
    loop {
        let mut lo = vec![f64::NEG_INFINITY; n];
        let mut hi = vec![f64::INFINITY; n];
        for (ci, c) in combined.constraints.iter().enumerate() {
            let mask = subsets[ci][choice[ci]];
            for i in 0..n {
                if mask & (1 << i) != 0 {
                    continue;
                }
                match c.direction {
                    Direction::Upper => hi[i] = hi[i].min(c.dose),
                    Direction::Lower => lo[i] = lo[i].max(c.dose),
                }
            }
        }
        if lo.iter().zip(&hi).all(|(l, h)| l <= h) {
            let cand: Vec<f64> = (0..n).map(|i| v[i].max(lo[i]).min(hi[i])).collect();
            let dist = squared_distance(v, &cand);
            if best.as_ref().is_none_or(|(d, _)| dist < *d) {
                best = Some((dist, cand));
            }
        }
        if !advance(&mut choice, &subsets) {
            break;
        }
    }
    Ok(best.map(|(_, p)| p).unwrap_or_else(|| v.to_vec()))
}

fn advance(choice: &mut [usize], subsets: &[Vec<u32>]) -> bool {
    for i in (0..choice.len()).rev() {
        choice[i] += 1;
        if choice[i] < subsets[i].len() {
            return true;
        }
        choice[i] = 0;
    }
    false
}

/// Bitmasks of all `k`-subsets of `0..n`, in lexicographic order of the
/// sorted index lists.
fn subsets_of_size(n: usize, k: usize) -> Vec<u32> {
    fn rec(start: usize, n: usize, k: usize, mask: u32, out: &mut Vec<u32>) {
        if k == 0 {
            out.push(mask);
            return;
        }
        for i in start..=n - k {
            rec(i + 1, n, k - 1, mask | (1 << i), out);
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, 0, &mut out);
    out
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
