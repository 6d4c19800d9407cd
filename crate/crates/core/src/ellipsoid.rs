//! Identity-perturbation ellipsoid fitting.
//!
//! Given `G_i = r_i X_i`, the candidate is `Q = I + Σ δ_i X_i X_iᵀ` where the
//! weights solve `M δ = ε` with `M_ij = ⟨X_i, X_j⟩²` and `ε_i = 1/r_i² − 1`.
//! Every constraint `⟨G_i, Q G_i⟩ = 1` then holds by construction; the fit
//! is a valid ellipsoid exactly when `Q ⪰ 0`.
//!
//! Certificates are always recomputed from the raw points and `Q`, never
//! read back from the linear solve.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    cholesky_solve, dot, extreme_eigenvalues, spectral_norm, LinalgError, SymMatrix,
};
use crate::sampling::PointCloud;

/// Packed `M` beyond this order would need more than ~1.6 GB.
pub const MAX_GRAM_ORDER: usize = 20_000;
/// Largest accepted `|⟨G_i, Q G_i⟩ − 1|`.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// `Q` counts as PSD when its smallest eigenvalue is at least `-PSD_TOL`.
pub const PSD_TOL: f64 = 1e-9;
/// Relative residual tolerance for every eigenvalue computation here.
pub const EIG_TOL: f64 = 1e-11;

pub const ORACLE_MAX_POINTS: usize = 200;
pub const ORACLE_MAX_DIM: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EllipsoidError {
    #[error("instance too large: n = {n} exceeds the Gram matrix limit of {limit}")]
    InstanceTooLarge { n: usize, limit: usize },
    #[error("Gram system is degenerate: {0}")]
    GramDegenerate(#[source] LinalgError),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("shape mismatch: cloud has d = {expected}, matrix has order {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error(
        "oracle limited to n <= {ORACLE_MAX_POINTS}, d <= {ORACLE_MAX_DIM} (got n = {n}, d = {d})"
    )]
    OracleTooLarge { n: usize, d: usize },
    #[error("eigenvalue computation failed: {0}")]
    Eig(#[source] LinalgError),
}

/// Per-point norm deviations `ε_i = 1/r_i² − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationVector(Vec<f64>);

impl DeviationVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn inf_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FitStatus {
    Success,
    GramDegenerate,
    #[serde(rename = "NotPSD")]
    NotPsd,
    EigFailed,
}

impl FitStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FitStatus::Success => "Success",
            FitStatus::GramDegenerate => "GramDegenerate",
            FitStatus::NotPsd => "NotPSD",
            FitStatus::EigFailed => "EigFailed",
        }
    }

    pub fn is_success(self) -> bool {
        self == FitStatus::Success
    }
}

impl std::fmt::Display for FitStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FitStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Success" => Ok(FitStatus::Success),
            "GramDegenerate" => Ok(FitStatus::GramDegenerate),
            "NotPSD" => Ok(FitStatus::NotPsd),
            "EigFailed" => Ok(FitStatus::EigFailed),
            other => Err(format!("unknown fit status {other:?}")),
        }
    }
}

/// Outcome of one fit. Quantities that could not be computed (for example
/// everything after a degenerate Gram solve) are `NaN`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub delta: Vec<f64>,
    pub max_residual: f64,
    pub q_min_eig: f64,
    pub perturbation_norm: f64,
    pub m_min_eig: f64,
    pub status: FitStatus,
}

/// A fit together with the intermediate objects, for diagnostics.
#[derive(Debug, Clone)]
pub struct Fit {
    pub gram: SymMatrix,
    pub deviations: DeviationVector,
    pub perturbation: Option<SymMatrix>,
    pub q: Option<SymMatrix>,
    pub result: FitResult,
}

/// `M_ij = ⟨X_i, X_j⟩²` over the unit directions.
pub fn build_gram(cloud: &PointCloud) -> Result<SymMatrix, EllipsoidError> {
    let n = cloud.n();
    if n > MAX_GRAM_ORDER {
        return Err(EllipsoidError::InstanceTooLarge {
            n,
            limit: MAX_GRAM_ORDER,
        });
    }
    Ok(SymMatrix::from_fn(n, |i, j| {
        let c = dot(cloud.direction(i), cloud.direction(j));
        c * c
    }))
}

pub fn build_deviations(cloud: &PointCloud) -> DeviationVector {
    DeviationVector(cloud.norms().iter().map(|r| 1.0 / (r * r) - 1.0).collect())
}

/// Dual weights `δ = M⁻¹ ε`.
pub fn solve_dual(gram: &SymMatrix, eps: &DeviationVector) -> Result<Vec<f64>, EllipsoidError> {
    if gram.order() != eps.len() {
        return Err(EllipsoidError::LengthMismatch {
            expected: gram.order(),
            found: eps.len(),
        });
    }
    cholesky_solve(gram, eps.values()).map_err(EllipsoidError::GramDegenerate)
}

/// `P = Σ δ_i X_i X_iᵀ` (d × d).
pub fn perturbation(cloud: &PointCloud, delta: &[f64]) -> Result<SymMatrix, EllipsoidError> {
    if delta.len() != cloud.n() {
        return Err(EllipsoidError::LengthMismatch {
            expected: cloud.n(),
            found: delta.len(),
        });
    }
    let d = cloud.d();
    let mut packed = vec![0.0; d * (d + 1) / 2];
    for (i, &w) in delta.iter().enumerate() {
        let x = cloud.direction(i);
        let mut k = 0;
        for a in 0..d {
            let wa = w * x[a];
            for &xb in &x[..=a] {
                packed[k] += wa * xb;
                k += 1;
            }
        }
    }
    SymMatrix::from_packed(d, packed).map_err(EllipsoidError::Eig)
}

/// `max_i |⟨G_i, Q G_i⟩ − 1|`, evaluated directly.
pub fn max_constraint_residual(cloud: &PointCloud, q: &SymMatrix) -> Result<f64, EllipsoidError> {
    if q.order() != cloud.d() {
        return Err(EllipsoidError::ShapeMismatch {
            expected: cloud.d(),
            found: q.order(),
        });
    }
    Ok((0..cloud.n())
        .map(|i| (q.quadratic_form(cloud.point(i)) - 1.0).abs())
        .fold(0.0, f64::max))
}

pub fn fit_ellipsoid(cloud: &PointCloud) -> Result<FitResult, EllipsoidError> {
    fit_ellipsoid_detailed(cloud).map(|f| f.result)
}

/// Runs the whole construction and certifies it.
///
/// Construction failures are reported through [`FitStatus`]; only an
/// oversized instance is an error.
pub fn fit_ellipsoid_detailed(cloud: &PointCloud) -> Result<Fit, EllipsoidError> {
    let gram = build_gram(cloud)?;
    let deviations = build_deviations(cloud);
    let m_eig = extreme_eigenvalues(&gram, EIG_TOL);
    let m_min_eig = m_eig.as_ref().map_or(f64::NAN, |p| p.lambda_min);

    let delta = match solve_dual(&gram, &deviations) {
        Ok(delta) => delta,
        Err(_) => {
            return Ok(Fit {
                gram,
                deviations,
                perturbation: None,
                q: None,
                result: FitResult {
                    delta: Vec::new(),
                    max_residual: f64::NAN,
                    q_min_eig: f64::NAN,
                    perturbation_norm: f64::NAN,
                    m_min_eig,
                    status: FitStatus::GramDegenerate,
                },
            })
        }
    };

    let p = perturbation(cloud, &delta)?;
    let q = p.shifted(1.0);
    let max_residual = max_constraint_residual(cloud, &q)?;
    let q_eig = extreme_eigenvalues(&q, EIG_TOL);
    let p_norm = spectral_norm(&p, EIG_TOL);

    let (q_min_eig, perturbation_norm, status) = match (&m_eig, q_eig, p_norm) {
        (Ok(_), Ok(qe), Ok(pn)) => {
            let status = if qe.lambda_min < -PSD_TOL {
                FitStatus::NotPsd
            } else if max_residual <= RESIDUAL_TOL {
                FitStatus::Success
            } else {
                // PSD but the constraints are not met: the solve was too
                // ill-conditioned to trust.
                FitStatus::GramDegenerate
            };
            (qe.lambda_min, pn, status)
        }
        (_, qe, pn) => (
            qe.map_or(f64::NAN, |e| e.lambda_min),
            pn.unwrap_or(f64::NAN),
            FitStatus::EigFailed,
        ),
    };

    Ok(Fit {
        gram,
        deviations,
        perturbation: Some(p),
        q: Some(q),
        result: FitResult {
            delta,
            max_residual,
            q_min_eig,
            perturbation_norm,
            m_min_eig,
            status,
        },
    })
}

/// Minimizer of `‖Q − I‖_F` over symmetric `Q` with `⟨G_i, Q G_i⟩ = 1`,
/// computed from the raw points through the full KKT system
/// `[[I, Aᵀ], [A, 0]] [x; λ] = [0; b]` in an orthonormal basis of symmetric
/// matrices, solved by dense partial-pivot LU.
///
/// This route shares no code with [`fit_ellipsoid`] beyond the cloud itself,
/// so it serves as an independent check of the construction.
pub fn least_norm_oracle(cloud: &PointCloud) -> Result<SymMatrix, EllipsoidError> {
    let (n, d) = (cloud.n(), cloud.d());
    if n > ORACLE_MAX_POINTS || d > ORACLE_MAX_DIM {
        return Err(EllipsoidError::OracleTooLarge { n, d });
    }
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|a| (0..=a).map(move |b| (a, b))).collect();
    let dim = pairs.len();
    let size = dim + n;
    let sqrt2 = std::f64::consts::SQRT_2;

    let mut kkt = DMatrix::<f64>::zeros(size, size);
    let mut rhs = DVector::<f64>::zeros(size);
    for k in 0..dim {
        kkt[(k, k)] = 1.0;
    }
    let mut constraint = DMatrix::<f64>::zeros(n, dim);
    for i in 0..n {
        let g = cloud.point(i);
        for (k, &(a, b)) in pairs.iter().enumerate() {
            let v = if a == b {
                g[a] * g[a]
            } else {
                sqrt2 * g[a] * g[b]
            };
            constraint[(i, k)] = v;
            kkt[(dim + i, k)] = v;
            kkt[(k, dim + i)] = v;
        }
        rhs[dim + i] = 1.0 - g.iter().map(|x| x * x).sum::<f64>();
    }

    let sol = kkt.lu().solve(&rhs).ok_or(EllipsoidError::GramDegenerate(
        LinalgError::NotPositiveDefinite { pivot_index: 0 },
    ))?;
    let x = sol.rows(0, dim).into_owned();
    let b = rhs.rows(dim, n).into_owned();
    let miss = (&constraint * &x - &b).amax();
    if miss.is_nan() || miss > 1e-8 * (1.0 + b.amax()) {
        return Err(EllipsoidError::GramDegenerate(
            LinalgError::InaccurateSolve {
                relative_residual: miss,
            },
        ));
    }

    let mut q = SymMatrix::identity(d);
    for (k, &(a, b)) in pairs.iter().enumerate() {
        if a == b {
            q.set(a, a, 1.0 + x[k]);
        } else {
            q.set(a, b, x[k] / sqrt2);
        }
    }
    Ok(q)
}

/// Independent certificate for a candidate `Q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Certificate {
    pub max_residual: f64,
    pub min_eig: f64,
}

impl Certificate {
    pub fn passes(&self) -> bool {
        self.max_residual <= RESIDUAL_TOL && self.min_eig >= -PSD_TOL
    }
}

pub fn verify(cloud: &PointCloud, q: &SymMatrix) -> Result<Certificate, EllipsoidError> {
    let max_residual = max_constraint_residual(cloud, q)?;
    let min_eig = extreme_eigenvalues(q, EIG_TOL)
        .map_err(EllipsoidError::Eig)?
        .lambda_min;
    Ok(Certificate {
        max_residual,
        min_eig,
    })
}

/// On-disk `Q`: `{"d": int, "q": [[...], ...]}`, dense row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QFile {
    pub d: usize,
    pub q: Vec<Vec<f64>>,
}

impl QFile {
    pub fn from_matrix(q: &SymMatrix) -> Self {
        Self {
            d: q.order(),
            q: q.to_dense(),
        }
    }

    pub fn into_matrix(self) -> Result<SymMatrix, EllipsoidError> {
        if self.q.len() != self.d {
            return Err(EllipsoidError::ShapeMismatch {
                expected: self.d,
                found: self.q.len(),
            });
        }
        SymMatrix::from_dense(&self.q, 1e-12).map_err(|e| match e {
            LinalgError::DimensionMismatch { found, .. } => EllipsoidError::ShapeMismatch {
                expected: self.d,
                found,
            },
            other => EllipsoidError::Eig(other),
        })
    }
}
