//! Weight matrices, their empirical spectral densities, and empirical CDFs.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Singular values below this fraction of the largest one are treated as 0.
pub const SINGULAR_VALUE_FLOOR: f64 = 1e-12;

const SVD_MAX_ITERATIONS: usize = 10_000;

/// Dense real matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl WeightMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "expected {} values for a {rows}x{cols} matrix, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite entry at index {idx} (row {}, col {})",
                idx / cols,
                idx % cols
            )));
        }
        Ok(WeightMatrix { rows, cols, values })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        WeightMatrix::new(rows, cols, values)
    }

    pub fn identity(n: usize) -> Result<Self> {
        WeightMatrix::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn transpose(&self) -> WeightMatrix {
        let mut values = Vec::with_capacity(self.values.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                values.push(self.get(r, c));
            }
        }
        WeightMatrix {
            rows: self.cols,
            cols: self.rows,
            values,
        }
    }

    pub fn scaled(&self, factor: f64) -> Result<WeightMatrix> {
        WeightMatrix::new(self.rows, self.cols, self.values.iter().map(|v| v * factor).collect())
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub(crate) fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.values)
    }

    pub(crate) fn from_dmatrix(m: &DMatrix<f64>) -> Result<Self> {
        WeightMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
    }
}

/// Eigenvalues of `WᵀW` in ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    source_rows: usize,
    source_cols: usize,
}

impl Spectrum {
    /// Builds a spectrum from arbitrary-order nonnegative values.
    pub fn new(mut eigenvalues: Vec<f64>, source_rows: usize, source_cols: usize) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::InvalidData("empty spectrum".into()));
        }
        if let Some(v) = eigenvalues.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidData(format!(
                "eigenvalues must be finite and nonnegative, got {v}"
            )));
        }
        eigenvalues.sort_by(f64::total_cmp);
        Ok(Spectrum {
            eigenvalues,
            source_rows,
            source_cols,
        })
    }

    /// Spectrum of an abstract sample with no source matrix, recorded as `n x n`.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Spectrum::new(values, n, n)
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn source_rows(&self) -> usize {
        self.source_rows
    }

    pub fn source_cols(&self) -> usize {
        self.source_cols
    }

    /// Strictly positive eigenvalues, ascending.
    pub fn positive(&self) -> &[f64] {
        let start = self.eigenvalues.partition_point(|&v| v <= 0.0);
        &self.eigenvalues[start..]
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    pub fn ecdf(&self, x: f64) -> f64 {
        // Nonempty by construction.
        ecdf_count(&self.eigenvalues, x) as f64 / self.eigenvalues.len() as f64
    }
}

/// Computes the empirical spectral density support of `w`.
///
/// The matrix is oriented so that it has at least as many rows as columns and
/// the eigenvalues of `WᵀW` are taken as the squared singular values, so the
/// Gram matrix is never formed.
pub fn esd(w: &WeightMatrix) -> Result<Spectrum> {
    if let Some(idx) = w.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite entry at index {idx}")));
    }
    let oriented = if w.rows >= w.cols {
        w.to_dmatrix()
    } else {
        w.to_dmatrix().transpose()
    };
    let (rows, cols) = (oriented.nrows(), oriented.ncols());
    let svd = nalgebra::linalg::SVD::try_new(oriented, false, false, f64::EPSILON, SVD_MAX_ITERATIONS)
        .ok_or_else(|| Error::NumericFailure(format!("SVD did not converge for {rows}x{cols} matrix")))?;
    let singular = svd.singular_values;
    let largest = singular.iter().cloned().fold(0.0, f64::max);
    let floor = largest * SINGULAR_VALUE_FLOOR;
    let eigenvalues = singular.iter().map(|&s| if s <= floor { 0.0 } else { s * s }).collect();
    Spectrum::new(eigenvalues, rows, cols)
}

fn ecdf_count(sorted: &[f64], x: f64) -> usize {
    sorted.partition_point(|&v| v <= x)
}

/// Right-continuous empirical CDF of ascending `values` evaluated at `x`.
pub fn ecdf_at(values: &[f64], x: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("ECDF of an empty sample".into()));
    }
    Ok(ecdf_count(values, x) as f64 / values.len() as f64)
}
