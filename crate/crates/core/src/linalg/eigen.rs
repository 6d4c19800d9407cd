//! Extremal eigenvalues of symmetric matrices.
//!
//! Small matrices (order <= [`DENSE_CUTOFF`]) are reduced to tridiagonal
//! form by Householder reflections and solved completely by implicit QL.
//! Larger ones run Lanczos with full reorthogonalization; the Ritz values of
//! the Lanczos tridiagonal are computed by the same QL kernel, tracking only
//! the bottom row of the eigenvector matrix to get residual estimates
//! `|β_k · y_k|` cheaply. A converged pair is always confirmed by forming
//! the Ritz vectors and measuring `‖Sv − θv‖` directly.

use serde::{Deserialize, Serialize};

use super::{axpy, dot, norm2, LinalgError, Result, SymMatrix};

/// Orders at or below this use the dense tridiagonal path.
pub const DENSE_CUTOFF: usize = 64;

const QL_MAX_SWEEPS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigPair {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct EigOptions {
    /// Residual tolerance relative to `‖S‖_F`.
    pub tol: f64,
    /// Lanczos step cap; `None` means `10 · order`.
    pub max_iterations: Option<usize>,
    pub dense_cutoff: usize,
}

impl EigOptions {
    pub fn new(tol: f64) -> Self {
        Self {
            tol,
            max_iterations: None,
            dense_cutoff: DENSE_CUTOFF,
        }
    }
}

pub fn extreme_eigenvalues(s: &SymMatrix, tol: f64) -> Result<EigPair> {
    extreme_eigenvalues_with(s, &EigOptions::new(tol))
}

pub fn extreme_eigenvalues_with(s: &SymMatrix, opts: &EigOptions) -> Result<EigPair> {
    if !(opts.tol > 0.0 && opts.tol.is_finite()) {
        return Err(LinalgError::InvalidTolerance(opts.tol));
    }
    let n = s.order();
    if n == 0 {
        return Err(LinalgError::Empty);
    }
    if !s.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let fro = s.frobenius_norm();
    if fro == 0.0 {
        return Ok(EigPair {
            lambda_min: 0.0,
            lambda_max: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    if n <= opts.dense_cutoff {
        dense_extremes(s)
    } else {
        let cap = opts.max_iterations.unwrap_or(10 * n).max(1);
        lanczos_extremes(s, fro, opts.tol, cap)
    }
}

/// `max(|λ_min|, |λ_max|)`.
pub fn spectral_norm(s: &SymMatrix, tol: f64) -> Result<f64> {
    spectral_norm_with(s, &EigOptions::new(tol))
}

pub fn spectral_norm_with(s: &SymMatrix, opts: &EigOptions) -> Result<f64> {
    let pair = extreme_eigenvalues_with(s, opts)?;
    Ok(pair.lambda_min.abs().max(pair.lambda_max.abs()))
}

/// All eigenvalues (ascending) of the symmetric tridiagonal matrix with
/// diagonal `diag` and sub-diagonal `off` (`off.len() == diag.len() - 1`).
pub fn tridiagonal_eigenvalues(diag: &[f64], off: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if n == 0 {
        return Err(LinalgError::Empty);
    }
    if off.len() + 1 != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n - 1,
            found: off.len(),
        });
    }
    let mut d = diag.to_vec();
    let mut e = off.to_vec();
    e.push(0.0);
    ql_implicit(&mut d, &mut e, &mut [], 0)?;
    d.sort_by(f64::total_cmp);
    Ok(d)
}

/// Implicit QL with Wilkinson shifts on a symmetric tridiagonal matrix.
///
/// `e[i]` couples `d[i]` and `d[i + 1]`; `e[n - 1]` is scratch. `z` is a
/// `rows × n` row-major block that receives every plane rotation, so passing
/// the identity yields eigenvectors as columns and passing `e_{n-1}ᵀ` yields
/// just their last components. Returns the number of QL sweeps.
fn ql_implicit(d: &mut [f64], e: &mut [f64], z: &mut [f64], rows: usize) -> Result<usize> {
    let n = d.len();
    debug_assert_eq!(e.len(), n);
    debug_assert_eq!(z.len(), rows * n);
    let mut total = 0;
    for l in 0..n {
        let mut sweeps = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            sweeps += 1;
            total += 1;
            if sweeps > QL_MAX_SWEEPS {
                return Err(LinalgError::NotConverged { iterations: total });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut deflated = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for row in z.chunks_exact_mut(n) {
                    let f = row[i + 1];
                    row[i + 1] = s * row[i] + c * f;
                    row[i] = c * row[i] - s * f;
                }
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(total)
}

/// Householder reduction of a dense row-major symmetric matrix to tridiagonal
/// form. Returns `(diagonal, sub-diagonal padded with a trailing zero)`.
fn householder_tridiagonal(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for k in 0..n.saturating_sub(2) {
        let m = n - k - 1;
        let x: Vec<f64> = (k + 1..n).map(|i| a[i * n + k]).collect();
        let x_norm = norm2(&x);
        diag[k] = a[k * n + k];
        if x_norm == 0.0 {
            off[k] = 0.0;
            continue;
        }
        let alpha = if x[0] >= 0.0 { -x_norm } else { x_norm };
        off[k] = alpha;
        let v = &mut v[..m];
        v.copy_from_slice(&x);
        v[0] -= alpha;
        let v_norm = norm2(v);
        v.iter_mut().for_each(|t| *t /= v_norm);
        // p = A22 v, K = vᵀp, q = p − K v; A22 −= 2(v qᵀ + q vᵀ)
        let p = &mut p[..m];
        for (r, pr) in p.iter_mut().enumerate() {
            let row = &a[(k + 1 + r) * n + k + 1..(k + 2 + r) * n];
            *pr = dot(row, v);
        }
        let kappa = dot(v, p);
        for (pr, &vr) in p.iter_mut().zip(v.iter()) {
            *pr -= kappa * vr;
        }
        for r in 0..m {
            let row = &mut a[(k + 1 + r) * n + k + 1..(k + 2 + r) * n];
            let (vr, qr) = (v[r], p[r]);
            for c in 0..m {
                row[c] -= 2.0 * (vr * p[c] + qr * v[c]);
            }
        }
    }
    if n >= 2 {
        diag[n - 2] = a[(n - 2) * n + n - 2];
        off[n - 2] = a[(n - 1) * n + n - 2];
    }
    diag[n - 1] = a[(n - 1) * n + n - 1];
    off[n - 1] = 0.0;
    (diag, off)
}

fn dense_extremes(s: &SymMatrix) -> Result<EigPair> {
    let n = s.order();
    let (mut d, mut e) = householder_tridiagonal(s.to_dense_flat(), n);
    let sweeps = ql_implicit(&mut d, &mut e, &mut [], 0)?;
    let lambda_min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let lambda_max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(EigPair {
        lambda_min,
        lambda_max,
        iterations: sweeps,
        converged: true,
    })
}

/// Deterministic pseudo-random start vector (splitmix64 stream).
fn start_vector(n: usize) -> Vec<f64> {
    let mut state: u64 = 0x243F_6A88_85A3_08D3 ^ n as u64;
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            ((z >> 11) as f64 + 0.5) / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect();
    let norm = norm2(&v);
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

fn argmin_argmax(vals: &[f64]) -> (usize, usize) {
    let mut imin = 0;
    let mut imax = 0;
    for (i, &x) in vals.iter().enumerate() {
        if x < vals[imin] {
            imin = i;
        }
        if x > vals[imax] {
            imax = i;
        }
    }
    (imin, imax)
}

fn tridiagonal_setup(alphas: &[f64], betas: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut e = betas[..alphas.len() - 1].to_vec();
    e.push(0.0);
    (alphas.to_vec(), e)
}

/// Measured residuals `‖S u − θ u‖` for the Ritz pairs at the two extremes.
fn ritz_residuals(
    s: &SymMatrix,
    basis: &[Vec<f64>],
    alphas: &[f64],
    betas: &[f64],
) -> Result<(f64, f64, f64, f64)> {
    let k = alphas.len();
    let (mut d, mut e) = tridiagonal_setup(alphas, betas);
    let mut z = vec![0.0; k * k];
    for i in 0..k {
        z[i * k + i] = 1.0;
    }
    ql_implicit(&mut d, &mut e, &mut z, k)?;
    let (imin, imax) = argmin_argmax(&d);
    let n = s.order();
    let mut out = [0.0; 2];
    for (slot, idx) in [imin, imax].into_iter().enumerate() {
        let mut u = vec![0.0; n];
        for (j, q) in basis.iter().enumerate() {
            axpy(z[j * k + idx], q, &mut u);
        }
        let u_norm = norm2(&u);
        let mut su = s.matvec(&u);
        axpy(-d[idx], &u, &mut su);
        out[slot] = norm2(&su) / u_norm;
    }
    Ok((d[imin], d[imax], out[0], out[1]))
}

fn lanczos_extremes(s: &SymMatrix, fro: f64, tol: f64, cap: usize) -> Result<EigPair> {
    let n = s.order();
    let target = tol * fro;
    let breakdown = 1e-13 * fro;
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut v = start_vector(n);
    let mut w = vec![0.0; n];

    for k in 0..cap {
        s.matvec_into(&v, &mut w);
        let alpha = dot(&w, &v);
        axpy(-alpha, &v, &mut w);
        if k > 0 {
            axpy(-betas[k - 1], &basis[k - 1], &mut w);
        }
        basis.push(v);
        // two passes of classical Gram-Schmidt against the whole basis
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&w, q);
                axpy(-c, q, &mut w);
            }
        }
        let beta = norm2(&w);
        alphas.push(alpha);
        let steps = k + 1;
        let invariant = beta <= breakdown || steps == n;

        let (mut d, mut e) = tridiagonal_setup(&alphas, &betas);
        let mut last_row = vec![0.0; steps];
        last_row[steps - 1] = 1.0;
        ql_implicit(&mut d, &mut e, &mut last_row, 1)?;
        let (imin, imax) = argmin_argmax(&d);
        let est_min = beta * last_row[imin].abs();
        let est_max = beta * last_row[imax].abs();

        if invariant || (est_min <= target && est_max <= target) {
            let (lambda_min, lambda_max, res_min, res_max) =
                ritz_residuals(s, &basis, &alphas, &betas)?;
            if res_min <= target && res_max <= target {
                return Ok(EigPair {
                    lambda_min,
                    lambda_max,
                    iterations: steps,
                    converged: true,
                });
            }
            if invariant {
                return Err(LinalgError::NotConverged { iterations: steps });
            }
        }
        betas.push(beta);
        v = w.iter().map(|x| x / beta).collect();
    }
    Err(LinalgError::NotConverged { iterations: cap })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lanczos_only(tol: f64) -> EigOptions {
        EigOptions {
            tol,
            max_iterations: None,
            dense_cutoff: 0,
        }
    }

    #[test]
    fn diagonal_matrix() {
        let s = SymMatrix::from_diagonal(&[1.0, 2.0, 3.0]);
        let p = extreme_eigenvalues(&s, 1e-12).unwrap();
        assert!((p.lambda_min - 1.0).abs() < 1e-14);
        assert!((p.lambda_max - 3.0).abs() < 1e-14);
        assert!(p.converged);
        let p = extreme_eigenvalues_with(&s, &lanczos_only(1e-12)).unwrap();
        assert!((p.lambda_min - 1.0).abs() < 1e-12);
        assert!((p.lambda_max - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rank_one_projector() {
        let u = [0.2, -0.4, 0.5, 0.1, 0.3];
        let norm = norm2(&u);
        let u: Vec<f64> = u.iter().map(|x| x / norm).collect();
        let s = SymMatrix::from_fn(5, |i, j| u[i] * u[j]);
        for opts in [EigOptions::new(1e-12), lanczos_only(1e-12)] {
            let p = extreme_eigenvalues_with(&s, &opts).unwrap();
            assert!(p.lambda_min.abs() < 1e-12, "{p:?}");
            assert!((p.lambda_max - 1.0).abs() < 1e-12, "{p:?}");
        }
    }

    #[test]
    fn zero_matrix_norm() {
        assert_eq!(spectral_norm(&SymMatrix::zeros(4), 1e-10).unwrap(), 0.0);
    }

    #[test]
    fn negative_extreme_dominates() {
        let s = SymMatrix::from_diagonal(&[-2.0, 1.0]);
        assert!((spectral_norm(&s, 1e-12).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn orthonormal_rank_two_sum() {
        let e1 = [1.0, 0.0, 0.0, 0.0];
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let e2 = [0.0, h, h, 0.0];
        let s = SymMatrix::from_fn(4, |i, j| 0.5 * e1[i] * e1[j] - 0.7 * e2[i] * e2[j]);
        assert!((spectral_norm(&s, 1e-12).unwrap() - 0.7).abs() < 1e-14);
        let p = extreme_eigenvalues(&s, 1e-12).unwrap();
        assert!((p.lambda_min + 0.7).abs() < 1e-14);
        assert!((p.lambda_max - 0.5).abs() < 1e-14);
    }

    #[test]
    fn tridiagonal_known_spectrum() {
        // tridiag(-1, 2, -1) of order n: 2 - 2 cos(kπ/(n+1))
        let n = 12;
        let vals = tridiagonal_eigenvalues(&vec![2.0; n], &vec![-1.0; n - 1]).unwrap();
        for (k, v) in vals.iter().enumerate() {
            let exact = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert!((v - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn lanczos_matches_dense_on_structured_matrix() {
        let n = 90;
        let s = SymMatrix::from_fn(n, |i, j| {
            if i == j {
                (i as f64).sin() * 3.0
            } else {
                1.0 / (1.0 + (i - j) as f64)
            }
        });
        let dense = dense_extremes(&s).unwrap();
        let lz = extreme_eigenvalues(&s, 1e-12).unwrap();
        assert!(lz.iterations <= n);
        assert!((dense.lambda_min - lz.lambda_min).abs() < 1e-9);
        assert!((dense.lambda_max - lz.lambda_max).abs() < 1e-9);
    }

    #[test]
    fn identity_breaks_down_immediately() {
        let p = extreme_eigenvalues(&SymMatrix::identity(200), 1e-12).unwrap();
        assert_eq!(p.iterations, 1);
        assert!((p.lambda_min - 1.0).abs() < 1e-14 && (p.lambda_max - 1.0).abs() < 1e-14);
    }

    #[test]
    fn iteration_cap_reports_not_converged() {
        let n = 100;
        let s = SymMatrix::from_fn(n, |i, j| if i == j { i as f64 } else { 0.01 });
        let opts = EigOptions {
            tol: 1e-12,
            max_iterations: Some(3),
            dense_cutoff: DENSE_CUTOFF,
        };
        assert_eq!(
            extreme_eigenvalues_with(&s, &opts).unwrap_err(),
            LinalgError::NotConverged { iterations: 3 }
        );
    }

    #[test]
    fn rejects_bad_tolerance() {
        let s = SymMatrix::identity(2);
        assert!(matches!(
            extreme_eigenvalues(&s, 0.0),
            Err(LinalgError::InvalidTolerance(_))
        ));
    }
}
