//! Empirical checks of the high-probability events behind the construction.
//!
//! * E1: `‖M⁻¹‖ <= 3`, reported with `‖M − EM‖` where
//!   `EM = (1 − 1/d) I + (1/d) J` is formed analytically.
//! * E2: `|ε_i| <= c₂ sqrt(log d / d)` for every `i`.
//! * E3: `‖δ‖_∞ <= c₃ log d / sqrt d`.
//!
//! The absolute constants are not known, so `c₂`, `c₃` are configuration
//! ([`Cutoffs`]) and every report carries the raw statistic next to the flag.

mod tails;

pub use tails::{
    epsilon_moments, epsilon_tail, epsilon_tail_with, sample_epsilons, tail_from_deviations,
    tensor_tail, BoundCheck, TailEstimate, EPSILON_THRESHOLDS, MIN_TAIL_SAMPLES,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ellipsoid::{
    fit_ellipsoid_detailed, DeviationVector, EllipsoidError, FitResult, EIG_TOL,
};
use crate::linalg::{extreme_eigenvalues, norm2, spectral_norm, LinalgError, SymMatrix};
use crate::sampling::{derive_trial_seed, sample_cloud, GaussianStream, PointCloud, SamplingError};
use crate::stats::pairwise_sum;

pub const DEFAULT_CUTOFF: f64 = 4.0;
/// E1 bound on `‖M⁻¹‖`.
pub const M_INV_NORM_BOUND: f64 = 3.0;
/// Slack on `λ_min(M) >= 1/3` absorbing eigensolver roundoff.
pub const E1_SLACK: f64 = 1e-9;
pub const UNIT_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("dimension d = {0} is too small (need d >= 5)")]
    DimensionTooSmall(usize),
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("vector is not unit length (norm {0})")]
    NotUnitVector(f64),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("threshold t0 = {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("eigenvalue computation failed: {0}")]
    EigFailed(#[source] LinalgError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Ellipsoid(#[from] EllipsoidError),
}

/// Multipliers for the E2 / E3 cutoffs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoffs {
    pub c2: f64,
    pub c3: f64,
}

impl Default for Cutoffs {
    fn default() -> Self {
        Self {
            c2: DEFAULT_CUTOFF,
            c3: DEFAULT_CUTOFF,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    pub m_inv_norm_max: f64,
    pub c2: f64,
    pub eps_inf_max: f64,
    pub c3: f64,
    pub delta_inf_max: f64,
}

impl Thresholds {
    pub fn new(d: usize, cutoffs: Cutoffs) -> Self {
        let d = d as f64;
        Self {
            m_inv_norm_max: M_INV_NORM_BOUND,
            c2: cutoffs.c2,
            eps_inf_max: cutoffs.c2 * (d.ln() / d).sqrt(),
            c3: cutoffs.c3,
            delta_inf_max: cutoffs.c3 * d.ln() / d.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventReport {
    pub e1_holds: bool,
    pub m_min_eig: f64,
    pub m_inv_norm: f64,
    pub m_dev_norm: f64,
    pub e2_holds: bool,
    pub eps_inf: f64,
    /// Coordinates with `|ε_i|` above the cutoff; E2 is their conjunction.
    pub e2_violations: usize,
    pub e3_holds: bool,
    pub delta_inf: f64,
    pub thresholds_used: Thresholds,
}

/// `(1 − 1/d) I_n + (1/d) J_n`.
pub fn expected_gram(n: usize, d: usize) -> SymMatrix {
    let inv_d = 1.0 / d as f64;
    SymMatrix::from_fn(n, |i, j| if i == j { 1.0 - inv_d } else { inv_d })
}

/// Evaluates E1, E2, E3 on the objects of a single fit. An empty `delta`
/// (degenerate solve) makes E3 fail with `delta_inf = NaN`.
pub fn check_events(
    cloud: &PointCloud,
    gram: &SymMatrix,
    eps: &DeviationVector,
    delta: &[f64],
    cutoffs: Cutoffs,
) -> Result<EventReport, DiagnosticsError> {
    let n = cloud.n();
    for found in [gram.order(), eps.len()] {
        if found != n {
            return Err(DiagnosticsError::LengthMismatch { expected: n, found });
        }
    }
    if !delta.is_empty() && delta.len() != n {
        return Err(DiagnosticsError::LengthMismatch {
            expected: n,
            found: delta.len(),
        });
    }
    let thresholds = Thresholds::new(cloud.d(), cutoffs);

    let m_min_eig = extreme_eigenvalues(gram, EIG_TOL)
        .map_err(DiagnosticsError::EigFailed)?
        .lambda_min;
    let m_inv_norm = if m_min_eig > 0.0 {
        1.0 / m_min_eig
    } else {
        f64::INFINITY
    };
    let deviation = gram
        .sub(&expected_gram(n, cloud.d()))
        .map_err(DiagnosticsError::EigFailed)?;
    let m_dev_norm = spectral_norm(&deviation, EIG_TOL).map_err(DiagnosticsError::EigFailed)?;
    let e1_holds = m_min_eig >= 1.0 / M_INV_NORM_BOUND - E1_SLACK;

    let e2_violations = eps
        .values()
        .iter()
        .filter(|e| e.is_nan() || e.abs() > thresholds.eps_inf_max)
        .count();
    let eps_inf = eps.inf_norm();

    let delta_inf = if delta.is_empty() {
        f64::NAN
    } else {
        delta.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    };
    let e3_holds = delta_inf <= thresholds.delta_inf_max;

    Ok(EventReport {
        e1_holds,
        m_min_eig,
        m_inv_norm,
        m_dev_norm,
        e2_holds: e2_violations == 0,
        eps_inf,
        e2_violations,
        e3_holds,
        delta_inf,
        thresholds_used: thresholds,
    })
}

/// Split of `β_i = ⟨u, X_i⟩²` at threshold `t0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitResult {
    pub threshold_t0: f64,
    /// `{ i : β_i > t0 }`, ascending.
    pub heavy_support: Vec<usize>,
    pub beta: Vec<f64>,
    /// `Σ_{i ∉ heavy} β_i²`.
    pub light_norm_sq: f64,
    /// `Σ_{i ∈ heavy} β_i`.
    pub heavy_l1: f64,
}

impl SplitResult {
    pub fn heavy_part(&self) -> Vec<f64> {
        self.beta
            .iter()
            .map(|&b| if b > self.threshold_t0 { b } else { 0.0 })
            .collect()
    }

    pub fn light_part(&self) -> Vec<f64> {
        self.beta
            .iter()
            .map(|&b| if b > self.threshold_t0 { 0.0 } else { b })
            .collect()
    }
}

/// Splits an explicit `β` vector.
pub fn split_betas(beta: Vec<f64>, t0: f64) -> SplitResult {
    let heavy_support: Vec<usize> = beta
        .iter()
        .enumerate()
        .filter(|(_, &b)| b > t0)
        .map(|(i, _)| i)
        .collect();
    let light_sq: Vec<f64> = beta.iter().filter(|&&b| b <= t0).map(|b| b * b).collect();
    let heavy: Vec<f64> = heavy_support.iter().map(|&i| beta[i]).collect();
    SplitResult {
        threshold_t0: t0,
        light_norm_sq: pairwise_sum(&light_sq),
        heavy_l1: pairwise_sum(&heavy),
        heavy_support,
        beta,
    }
}

/// `d^{-1/4}`, used when the caller passes `t0 = 0`.
pub fn default_t0(d: usize) -> f64 {
    (d as f64).powf(-0.25)
}

pub fn heavy_light_split(
    cloud: &PointCloud,
    u: &[f64],
    t0: f64,
) -> Result<SplitResult, DiagnosticsError> {
    if u.len() != cloud.d() {
        return Err(DiagnosticsError::LengthMismatch {
            expected: cloud.d(),
            found: u.len(),
        });
    }
    let norm = norm2(u);
    if (norm - 1.0).abs() > UNIT_TOL {
        return Err(DiagnosticsError::NotUnitVector(norm));
    }
    let t0 = if t0 == 0.0 { default_t0(cloud.d()) } else { t0 };
    if !(t0 > 0.0 && t0 <= 1.0) {
        return Err(DiagnosticsError::InvalidThreshold(t0));
    }
    let beta = (0..cloud.n())
        .map(|i| {
            let c = crate::linalg::dot(u, cloud.direction(i));
            c * c
        })
        .collect();
    Ok(split_betas(beta, t0))
}

/// Fit-level subset of [`FitResult`] used in reports (no `δ` vector).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub status: String,
    pub max_residual: f64,
    pub q_min_eig: f64,
    pub perturbation_norm: f64,
    pub m_min_eig: f64,
}

impl From<&FitResult> for FitSummary {
    fn from(r: &FitResult) -> Self {
        Self {
            status: r.status.to_string(),
            max_residual: r.max_residual,
            q_min_eig: r.q_min_eig,
            perturbation_norm: r.perturbation_norm,
            m_min_eig: r.m_min_eig,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentCheck {
    pub expected_mean: f64,
    pub expected_variance: f64,
    pub sample_mean: f64,
    pub sample_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSummary {
    pub threshold_t0: f64,
    pub heavy_support_size: usize,
    pub light_norm_sq: f64,
    pub heavy_l1: f64,
}

/// Everything `diagnose` reports for one `(d, n, seed)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    pub fit: FitSummary,
    pub events: EventReport,
    pub epsilon_moments: MomentCheck,
    pub split: SplitSummary,
    pub epsilon_tail: TailEstimate,
    pub tensor_tail: TailEstimate,
}

#[derive(Debug, Clone, Copy)]
pub struct DiagnoseOptions {
    pub cutoffs: Cutoffs,
    pub tail_samples: usize,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        Self {
            cutoffs: Cutoffs::default(),
            tail_samples: MIN_TAIL_SAMPLES,
        }
    }
}

/// Probe `(e₁⊗e₂ + e₂⊗e₁)/√2` as a flattened `d × d` matrix.
pub fn off_diagonal_probe(d: usize) -> Vec<f64> {
    let mut probe = vec![0.0; d * d];
    let h = std::f64::consts::FRAC_1_SQRT_2;
    probe[1] = h;
    probe[d] = h;
    probe
}

// Sub-stream tags so the auxiliary draws never reuse the cloud's seed.
const SPLIT_STREAM: u64 = 0x0053_504C_4954;
const EPS_TAIL_STREAM: u64 = 0x0045_5053_5F54;
const TENSOR_TAIL_STREAM: u64 = 0x5445_4E53_4F52;

/// Fit plus all event checks, the heavy/light split at a random probe, and
/// both tail estimators.
pub fn diagnose(
    d: usize,
    n: usize,
    seed: u64,
    opts: &DiagnoseOptions,
) -> Result<DiagnosticsReport, DiagnosticsError> {
    if d < 5 {
        return Err(DiagnosticsError::DimensionTooSmall(d));
    }
    let cloud = sample_cloud(d, n, seed)?;
    let fit = fit_ellipsoid_detailed(&cloud)?;
    let events = check_events(
        &cloud,
        &fit.gram,
        &fit.deviations,
        &fit.result.delta,
        opts.cutoffs,
    )?;

    let u = GaussianStream::new(derive_trial_seed(seed, SPLIT_STREAM), 1.0).unit_vector(d);
    let split = heavy_light_split(&cloud, &u, 0.0)?;

    let (expected_mean, expected_variance) = epsilon_moments(d)?;
    let eps_tail = epsilon_tail(
        d,
        opts.tail_samples,
        derive_trial_seed(seed, EPS_TAIL_STREAM),
    )?;
    let tensor = tensor_tail(
        d,
        opts.tail_samples,
        &off_diagonal_probe(d),
        derive_trial_seed(seed, TENSOR_TAIL_STREAM),
    )?;

    Ok(DiagnosticsReport {
        d,
        n,
        seed,
        fit: FitSummary::from(&fit.result),
        events,
        epsilon_moments: MomentCheck {
            expected_mean,
            expected_variance,
            sample_mean: eps_tail.sample_mean,
            sample_variance: eps_tail.sample_variance,
        },
        split: SplitSummary {
            threshold_t0: split.threshold_t0,
            heavy_support_size: split.heavy_support.len(),
            light_norm_sq: split.light_norm_sq,
            heavy_l1: split.heavy_l1,
        },
        epsilon_tail: eps_tail,
        tensor_tail: tensor,
    })
}
