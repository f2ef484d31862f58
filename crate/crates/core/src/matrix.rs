//! Sparse non-negative beamlet-to-voxel maps.

use sprs::{CsMat, TriMat};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatrixError {
    #[error("entry ({row}, {col}) outside a {rows}x{cols} matrix")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("negative entry {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

/// Dose-influence matrix in compressed sparse row form (Gy per MU).
///
/// Rows are voxels of one structure, columns are beamlets. Every stored
/// entry is finite and non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct DoseMatrix {
    csr: CsMat<f64>,
}

impl DoseMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicate positions
    /// are summed.
    pub fn from_triplets<I>(rows: usize, cols: usize, entries: I) -> Result<Self, MatrixError>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut tri = TriMat::new((rows, cols));
        for (row, col, value) in entries {
            if row >= rows || col >= cols {
                return Err(MatrixError::IndexOutOfRange {
                    row,
                    col,
                    rows,
                    cols,
                });
            }
            if !value.is_finite() {
                return Err(MatrixError::NonFinite { row, col });
            }
            if value < 0.0 {
                return Err(MatrixError::NegativeEntry { row, col, value });
            }
            tri.add_triplet(row, col, value);
        }
        Ok(Self { csr: tri.to_csr() })
    }

    /// Builds a matrix from dense rows, storing only nonzero entries.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self, MatrixError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut entries = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(MatrixError::IndexOutOfRange {
                    row: i,
                    col: row.len().max(cols),
                    rows: rows.len(),
                    cols,
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        Self::from_triplets(rows.len(), cols, entries)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            csr: CsMat::zero((rows, cols)),
        }
    }

    pub fn rows(&self) -> usize {
        self.csr.rows()
    }

    pub fn cols(&self) -> usize {
        self.csr.cols()
    }

    pub fn nnz(&self) -> usize {
        self.csr.nnz()
    }

    pub fn as_csr(&self) -> &CsMat<f64> {
        &self.csr
    }

    /// Stored entries of row `i` as `(col, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.csr.indptr().outer_inds_sz(i);
        let cols = &self.csr.indices()[range.clone()];
        let vals = &self.csr.data()[range];
        cols.iter().copied().zip(vals.iter().copied())
    }

    /// All stored entries in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows()).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    /// `out = A x`
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols());
        debug_assert_eq!(out.len(), self.rows());
        for (o, row) in out.iter_mut().zip(self.csr.outer_iterator()) {
            *o = row.iter().map(|(j, &v)| v * x[j]).sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows()];
        self.mul_vec_into(x, &mut out);
        out
    }

    /// `out += scale * A^T y`
    pub fn tr_mul_add(&self, y: &[f64], scale: f64, out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows());
        debug_assert_eq!(out.len(), self.cols());
        for (&yi, row) in y.iter().zip(self.csr.outer_iterator()) {
            let s = scale * yi;
            if s == 0.0 {
                continue;
            }
            for (j, &v) in row.iter() {
                out[j] += s * v;
            }
        }
    }

    /// Row-major dense copy, for small problems and tests.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.cols()]; self.rows()];
        for (i, j, v) in self.triplets() {
            dense[i][j] += v;
        }
        dense
    }

    /// Largest stored entry in each column (0 for empty columns).
    pub fn column_max(&self) -> Vec<f64> {
        let mut max = vec![0.0_f64; self.cols()];
        for (_, j, v) in self.triplets() {
            max[j] = max[j].max(v);
        }
        max
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let m = DoseMatrix::from_triplets(1, 1, [(0, 0, 1.0), (0, 0, 0.5)]).unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.to_dense(), vec![vec![1.5]]);
    }

    #[test]
    fn rejects_negative_and_out_of_range() {
        assert!(matches!(
            DoseMatrix::from_triplets(2, 2, [(0, 0, -1.0)]),
            Err(MatrixError::NegativeEntry { .. })
        ));
        assert!(matches!(
            DoseMatrix::from_triplets(2, 2, [(2, 0, 1.0)]),
            Err(MatrixError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn products_match_dense() {
        let dense = vec![vec![1.0, 0.0, 2.0], vec![0.0, 3.0, 0.5]];
        let m = DoseMatrix::from_dense(&dense).unwrap();
        assert_eq!(m.mul_vec(&[1.0, 2.0, 3.0]), vec![7.0, 7.5]);
        let mut out = vec![1.0; 3];
        m.tr_mul_add(&[1.0, 2.0], 2.0, &mut out);
        assert_eq!(out, vec![3.0, 13.0, 7.0]);
        assert_eq!(m.row(1).collect::<Vec<_>>(), vec![(1, 3.0), (2, 0.5)]);
    }
}
