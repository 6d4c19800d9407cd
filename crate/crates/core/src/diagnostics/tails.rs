//! Monte Carlo tail estimators.
//!
//! Samples are drawn in fixed-size chunks, each with its own derived seed, so
//! the output does not depend on how many threads run the chunks. Survival
//! frequencies are integer counts; moments use pairwise summation over the
//! samples in chunk order.

use rayon::prelude::*;
use serde::Serialize;

use super::{DiagnosticsError, UNIT_TOL};
use crate::linalg::{dot, norm2};
use crate::sampling::{derive_trial_seed, GaussianStream};
use crate::stats::{binomial_se, Moments};

pub const MIN_TAIL_SAMPLES: usize = 10_000;
const CHUNK: usize = 4096;
/// Survival band used for the slope fits.
const FIT_BAND: (f64, f64) = (1e-3, 0.1);

/// `t = k/100` for `k = 1..=100`.
pub const EPSILON_THRESHOLDS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailEstimate {
    pub sample_count: usize,
    pub thresholds: Vec<f64>,
    /// Fraction of samples with `|statistic − center| >= t`.
    pub empirical_tail: Vec<f64>,
    /// `1 / slope` of `−log tail` against `t`; `None` without a decaying band.
    pub fitted_psi1: Option<f64>,
    /// `1 / sqrt(slope)` of `−log tail` against `t²`.
    pub fitted_psi2: Option<f64>,
    /// `fitted_psi1` in units of `1/d`.
    pub fitted_psi1_times_d: Option<f64>,
    /// Expectation subtracted before taking absolute values.
    pub center: f64,
    /// Moments of the uncentered statistic.
    pub sample_mean: f64,
    pub sample_variance: f64,
    pub max_abs_deviation: f64,
}

/// One row of [`TailEstimate::check_bound`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub threshold: f64,
    pub empirical: f64,
    pub bound: f64,
    /// `bound + k · SE`, with the SE evaluated at `p = min(bound, 1)`.
    pub allowed: f64,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        self.empirical <= self.allowed
    }
}

impl TailEstimate {
    pub fn tail_at(&self, t: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&x| (x - t).abs() <= 1e-12 * t.abs().max(1.0))
            .map(|i| self.empirical_tail[i])
    }

    pub fn is_non_increasing(&self) -> bool {
        self.empirical_tail.windows(2).all(|w| w[1] <= w[0])
    }

    /// Compares the survival curve with `bound(t)` at every threshold `<= t_max`.
    pub fn check_bound(
        &self,
        bound: impl Fn(f64) -> f64,
        k_se: f64,
        t_max: f64,
    ) -> Vec<BoundCheck> {
        self.thresholds
            .iter()
            .zip(&self.empirical_tail)
            .filter(|(&t, _)| t <= t_max)
            .map(|(&t, &empirical)| {
                let b = bound(t);
                BoundCheck {
                    threshold: t,
                    empirical,
                    bound: b,
                    allowed: b + k_se * binomial_se(b.min(1.0), self.sample_count),
                }
            })
            .collect()
    }
}

/// Closed-form mean and variance of `ε = 1/‖G‖² − 1`, `G ~ N(0, I/d)`.
pub fn epsilon_moments(d: usize) -> Result<(f64, f64), DiagnosticsError> {
    if d < 5 {
        return Err(DiagnosticsError::DimensionTooSmall(d));
    }
    let d = d as f64;
    let mean = 2.0 / (d - 2.0);
    let variance = 2.0 * d * d / ((d - 2.0) * (d - 2.0) * (d - 4.0));
    Ok((mean, variance))
}

fn check_samples(samples: usize) -> Result<(), DiagnosticsError> {
    if samples < MIN_TAIL_SAMPLES {
        return Err(DiagnosticsError::TooFewSamples {
            min: MIN_TAIL_SAMPLES,
            got: samples,
        });
    }
    Ok(())
}

fn chunked<F>(samples: usize, seed: u64, sigma: f64, draw: F) -> Vec<f64>
where
    F: Fn(&mut GaussianStream) -> f64 + Sync,
{
    let chunks = samples.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(samples - c * CHUNK);
            let mut stream = GaussianStream::new(derive_trial_seed(seed, c as u64), sigma);
            (0..len).map(|_| draw(&mut stream)).collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .concat()
}

/// `samples` independent draws of `ε = 1/‖G‖² − 1`.
pub fn sample_epsilons(d: usize, samples: usize, seed: u64) -> Result<Vec<f64>, DiagnosticsError> {
    if d < 5 {
        return Err(DiagnosticsError::DimensionTooSmall(d));
    }
    let sigma = (1.0 / d as f64).sqrt();
    Ok(chunked(samples, seed, sigma, |stream| {
        let mut r2 = 0.0;
        for _ in 0..d {
            let g = stream.next_gaussian();
            r2 += g * g;
        }
        1.0 / r2 - 1.0
    }))
}

pub fn epsilon_tail(d: usize, samples: usize, seed: u64) -> Result<TailEstimate, DiagnosticsError> {
    let thresholds = (1..=EPSILON_THRESHOLDS).map(|k| k as f64 / 100.0).collect();
    epsilon_tail_with(d, samples, seed, thresholds)
}

/// Survival of `|ε − Eε|` at caller-chosen thresholds.
pub fn epsilon_tail_with(
    d: usize,
    samples: usize,
    seed: u64,
    thresholds: Vec<f64>,
) -> Result<TailEstimate, DiagnosticsError> {
    check_samples(samples)?;
    let (center, _) = epsilon_moments(d)?;
    let eps = sample_epsilons(d, samples, seed)?;
    Ok(tail_from_deviations(&eps, center, thresholds, d))
}

/// Survival of `⟨X⊗X − E X⊗X, probe⟩ = XᵀAX − tr(A)/d` for `X` uniform on
/// the sphere, where `A` is `probe` read as a row-major `d × d` matrix.
pub fn tensor_tail(
    d: usize,
    samples: usize,
    probe: &[f64],
    seed: u64,
) -> Result<TailEstimate, DiagnosticsError> {
    check_samples(samples)?;
    if probe.len() != d * d {
        return Err(DiagnosticsError::LengthMismatch {
            expected: d * d,
            found: probe.len(),
        });
    }
    let norm = norm2(probe);
    if (norm - 1.0).abs() > UNIT_TOL {
        return Err(DiagnosticsError::NotUnitVector(norm));
    }
    // XᵀAX only sees the symmetric part.
    let sym: Vec<f64> = (0..d * d)
        .map(|k| {
            let (i, j) = (k / d, k % d);
            0.5 * (probe[i * d + j] + probe[j * d + i])
        })
        .collect();
    let center = (0..d).map(|i| probe[i * d + i]).sum::<f64>() / d as f64;

    let stats = chunked(samples, seed, 1.0, |stream| {
        let x = stream.unit_vector(d);
        let mut acc = 0.0;
        for (i, xi) in x.iter().enumerate() {
            acc += xi * dot(&sym[i * d..(i + 1) * d], &x);
        }
        acc
    });
    let thresholds = (1..=200).map(|k| k as f64 / (10.0 * d as f64)).collect();
    Ok(tail_from_deviations(&stats, center, thresholds, d))
}

/// Builds a [`TailEstimate`] from raw samples of a statistic.
pub fn tail_from_deviations(
    samples: &[f64],
    center: f64,
    thresholds: Vec<f64>,
    d: usize,
) -> TailEstimate {
    let moments = Moments::of(samples);
    let mut abs_dev: Vec<f64> = samples.iter().map(|x| (x - center).abs()).collect();
    abs_dev.sort_by(f64::total_cmp);
    let n = abs_dev.len();
    let empirical_tail: Vec<f64> = thresholds
        .iter()
        .map(|&t| {
            let below = abs_dev.partition_point(|&v| v < t);
            (n - below) as f64 / n as f64
        })
        .collect();

    let fitted_psi1 = fit_slope(&thresholds, &empirical_tail, |t| t).map(|s| 1.0 / s);
    let fitted_psi2 = fit_slope(&thresholds, &empirical_tail, |t| t * t).map(|s| 1.0 / s.sqrt());
    TailEstimate {
        sample_count: n,
        fitted_psi1_times_d: fitted_psi1.map(|p| p * d as f64),
        thresholds,
        empirical_tail,
        fitted_psi1,
        fitted_psi2,
        center,
        sample_mean: moments.mean,
        sample_variance: moments.variance,
        max_abs_deviation: abs_dev.last().copied().unwrap_or(0.0),
    }
}

/// OLS slope of `−log tail` against `x(t)` over the fit band. Needs at least
/// three points and a positive slope.
fn fit_slope(thresholds: &[f64], tail: &[f64], x_of: impl Fn(f64) -> f64) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = thresholds
        .iter()
        .zip(tail)
        .filter(|(_, &p)| p >= FIT_BAND.0 && p <= FIT_BAND.1)
        .map(|(&t, &p)| (x_of(t), -p.ln()))
        .unzip();
    if xs.len() < 3 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    (slope > 0.0 && slope.is_finite()).then_some(slope)
}
