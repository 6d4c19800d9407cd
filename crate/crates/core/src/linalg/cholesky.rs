use super::{dot, norm2, LinalgError, Result, SymMatrix};

/// A pivot `<= PIVOT_RELATIVE_THRESHOLD * max_diag` is treated as rank collapse.
pub const PIVOT_RELATIVE_THRESHOLD: f64 = 1e-12;

/// Accepted solve residual: `‖Sx − b‖ <= SOLVE_RESIDUAL_FACTOR · (‖S‖_F ‖x‖ + ‖b‖)`.
pub const SOLVE_RESIDUAL_FACTOR: f64 = 1e-8;

const MAX_REFINEMENT_STEPS: usize = 3;

/// Lower Cholesky factor `S = L Lᵀ`, packed by rows like [`SymMatrix`].
///
/// Factor once, then call [`Cholesky::solve`] for as many right-hand sides
/// as needed.
#[derive(Debug, Clone)]
pub struct Cholesky {
    order: usize,
    factor: Vec<f64>,
}

impl Cholesky {
    pub fn factor(s: &SymMatrix) -> Result<Self> {
        let n = s.order();
        if n == 0 {
            return Err(LinalgError::Empty);
        }
        let threshold = PIVOT_RELATIVE_THRESHOLD * s.max_diagonal().max(0.0);
        let mut l = vec![0.0; n * (n + 1) / 2];
        let mut row_start = 0;
        for i in 0..n {
            let a_row = s.row_prefix(i);
            let mut col_start = 0;
            for j in 0..i {
                let (done, rest) = l.split_at_mut(row_start);
                let lj = &done[col_start..col_start + j];
                let li = &rest[..j];
                let v = (a_row[j] - dot(li, lj)) / done[col_start + j];
                rest[j] = v;
                col_start += j + 1;
            }
            let li = &l[row_start..row_start + i];
            let pivot = a_row[i] - dot(li, li);
            if pivot.is_nan() || pivot <= threshold {
                return Err(LinalgError::NotPositiveDefinite { pivot_index: i });
            }
            l[row_start + i] = pivot.sqrt();
            row_start += i + 1;
        }
        Ok(Self {
            order: n,
            factor: l,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Solves `L Lᵀ x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) -> Result<()> {
        if b.len() != self.order {
            return Err(LinalgError::DimensionMismatch {
                expected: self.order,
                found: b.len(),
            });
        }
        let n = self.order;
        // forward: L y = b
        let mut start = 0;
        for i in 0..n {
            let row = &self.factor[start..start + i + 1];
            b[i] = (b[i] - dot(&row[..i], &b[..i])) / row[i];
            start += i + 1;
        }
        // backward: Lᵀ x = y, column-oriented so rows stay contiguous
        for i in (0..n).rev() {
            let start = i * (i + 1) / 2;
            let row = &self.factor[start..start + i + 1];
            b[i] /= row[i];
            let xi = b[i];
            for (bk, &lik) in b[..i].iter_mut().zip(&row[..i]) {
                *bk -= lik * xi;
            }
        }
        Ok(())
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }

    /// Entry `(i, j)` of `L` (zero above the diagonal).
    pub fn l(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.factor[i * (i + 1) / 2 + j]
        }
    }
}

fn residual(s: &SymMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    let mut r = s.matvec(x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    r
}

/// Solves `S x = b` for symmetric positive definite `S`.
///
/// Runs up to three steps of iterative refinement when the first solution
/// misses the residual bound; fails with [`LinalgError::InaccurateSolve`] if
/// the bound is still not met.
pub fn cholesky_solve(s: &SymMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if s.order() != b.len() {
        return Err(LinalgError::DimensionMismatch {
            expected: s.order(),
            found: b.len(),
        });
    }
    let chol = Cholesky::factor(s)?;
    let mut x = chol.solve(b)?;
    let s_fro = s.frobenius_norm();
    let b_norm = norm2(b);
    for step in 0..=MAX_REFINEMENT_STEPS {
        let r = residual(s, &x, b);
        let bound = SOLVE_RESIDUAL_FACTOR * (s_fro * norm2(&x) + b_norm);
        let r_norm = norm2(&r);
        if r_norm <= bound {
            return Ok(x);
        }
        if step == MAX_REFINEMENT_STEPS {
            let denom = s_fro * norm2(&x) + b_norm;
            return Err(LinalgError::InaccurateSolve {
                relative_residual: r_norm / denom,
            });
        }
        let dx = chol.solve(&r)?;
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
    }
    unreachable!()
}
