//! Dense symmetric matrix kernels.
//!
//! Everything here works on [`SymMatrix`], a packed lower-triangular store
//! (row `i` holds entries `(i, 0..=i)` contiguously). The Gram matrices this
//! crate builds reach order ~10^4, where packing halves the footprint.
//!
//! | Operation | Routine |
//! |-----------|---------|
//! | solve `Sx = b` (SPD) | [`cholesky_solve`], [`Cholesky`] |
//! | extremal eigenvalues | [`extreme_eigenvalues`], [`EigOptions`] |
//! | spectral norm | [`spectral_norm`] |

mod cholesky;
mod eigen;

pub use cholesky::{cholesky_solve, Cholesky, PIVOT_RELATIVE_THRESHOLD, SOLVE_RESIDUAL_FACTOR};
pub use eigen::{
    extreme_eigenvalues, extreme_eigenvalues_with, spectral_norm, spectral_norm_with,
    tridiagonal_eigenvalues, EigOptions, EigPair, DENSE_CUTOFF,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot_index} collapsed)")]
    NotPositiveDefinite { pivot_index: usize },
    #[error("solve residual {relative_residual:e} exceeds the accepted bound after refinement")]
    InaccurateSolve { relative_residual: f64 },
    #[error("eigen iteration did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("matrix contains a non-finite entry")]
    NonFinite,
    #[error("tolerance must be positive and finite, got {0}")]
    InvalidTolerance(f64),
    #[error("matrix order must be at least 1")]
    Empty,
}

pub type Result<T> = std::result::Result<T, LinalgError>;

#[inline]
fn packed_index(i: usize, j: usize) -> usize {
    debug_assert!(j <= i);
    i * (i + 1) / 2 + j
}

/// Real symmetric matrix stored as a packed lower triangle.
///
/// There is a single stored copy of each off-diagonal pair, so `get(i, j)`
/// and `get(j, i)` can never disagree.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    order: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(order: usize) -> Self {
        Self {
            order,
            data: vec![0.0; order * (order + 1) / 2],
        }
    }

    pub fn identity(order: usize) -> Self {
        let mut m = Self::zeros(order);
        for i in 0..order {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Builds a matrix by evaluating `f(i, j)` on the lower triangle (`j <= i`).
    pub fn from_fn(order: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(order * (order + 1) / 2);
        for i in 0..order {
            for j in 0..=i {
                data.push(f(i, j));
            }
        }
        Self { order, data }
    }

    /// Takes ownership of a packed lower-triangular buffer.
    pub fn from_packed(order: usize, data: Vec<f64>) -> Result<Self> {
        let expected = order * (order + 1) / 2;
        if data.len() != expected {
            return Err(LinalgError::DimensionMismatch {
                expected,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        Ok(Self { order, data })
    }

    /// Reads a dense square matrix, requiring `|a_ij - a_ji| <= sym_tol * max|a|`.
    /// The lower triangle is kept.
    pub fn from_dense(rows: &[Vec<f64>], sym_tol: f64) -> Result<Self> {
        let order = rows.len();
        for row in rows {
            if row.len() != order {
                return Err(LinalgError::DimensionMismatch {
                    expected: order,
                    found: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(LinalgError::NonFinite);
            }
        }
        let scale = rows
            .iter()
            .flat_map(|r| r.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        #[allow(clippy::needless_range_loop)]
        for i in 0..order {
            for j in 0..i {
                if (rows[i][j] - rows[j][i]).abs() > sym_tol * scale {
                    return Err(LinalgError::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(Self::from_fn(order, |i, j| rows[i][j]))
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j <= i {
            self.data[packed_index(i, j)]
        } else {
            self.data[packed_index(j, i)]
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let k = if j <= i {
            packed_index(i, j)
        } else {
            packed_index(j, i)
        };
        self.data[k] = value;
    }

    pub fn packed(&self) -> &[f64] {
        &self.data
    }

    /// Entries `(i, 0..=i)`.
    #[inline]
    pub fn row_prefix(&self, i: usize) -> &[f64] {
        let start = packed_index(i, 0);
        &self.data[start..start + i + 1]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.order).map(|i| self.get(i, i)).collect()
    }

    pub fn max_diagonal(&self) -> f64 {
        (0..self.order)
            .map(|i| self.get(i, i))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn trace(&self) -> f64 {
        (0..self.order).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut diag = 0.0;
        let mut off = 0.0;
        for i in 0..self.order {
            let row = self.row_prefix(i);
            diag += row[i] * row[i];
            off += dot(&row[..i], &row[..i]);
        }
        (diag + 2.0 * off).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `y = S x`.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.order);
        assert_eq!(y.len(), self.order);
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.order {
            let row = self.row_prefix(i);
            let xi = x[i];
            y[i] += dot(&row[..i], &x[..i]) + row[i] * xi;
            for (yj, &a) in y[..i].iter_mut().zip(&row[..i]) {
                *yj += a * xi;
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.order];
        self.matvec_into(x, &mut y);
        y
    }

    /// `xᵀ S x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.order);
        let mut acc = 0.0;
        for i in 0..self.order {
            let row = self.row_prefix(i);
            acc += x[i] * (2.0 * dot(&row[..i], &x[..i]) + row[i] * x[i]);
        }
        acc
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            order: self.order,
            data: self.data.iter().map(|v| c * v).collect(),
        }
    }

    /// Entry-wise `self - other`.
    pub fn sub(&self, other: &SymMatrix) -> Result<Self> {
        if self.order != other.order {
            return Err(LinalgError::DimensionMismatch {
                expected: self.order,
                found: other.order,
            });
        }
        Ok(Self {
            order: self.order,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    /// `self + c·I`.
    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.order {
            out.data[packed_index(i, i)] += c;
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.order)
            .map(|i| (0..self.order).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// Row-major dense copy.
    pub fn to_dense_flat(&self) -> Vec<f64> {
        let n = self.order;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = self.get(i, j);
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
        out
    }
}

/// Dot product with four independent accumulators. The summation order is
/// fixed, so results are reproducible bit-for-bit for a given input.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in 4 * chunks..n {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
