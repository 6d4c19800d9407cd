//! Order-stable summary statistics.

const PAIRWISE_BLOCK: usize = 16;

/// Pairwise (cascade) summation. The split points depend only on the length,
/// so the result is reproducible for a given slice.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAIRWISE_BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Sample moments of a slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    /// Unbiased (n − 1) variance.
    pub variance: f64,
    /// Fourth central moment (biased).
    pub central_m4: f64,
}

impl Moments {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        let m = mean(xs);
        let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
        let m2 = pairwise_sum(&sq);
        let quad: Vec<f64> = sq.iter().map(|s| s * s).collect();
        Self {
            count: n,
            mean: m,
            variance: m2 / (n as f64 - 1.0),
            central_m4: pairwise_sum(&quad) / n as f64,
        }
    }

    pub fn standard_error_of_mean(&self) -> f64 {
        (self.variance / self.count as f64).sqrt()
    }

    /// Large-sample standard error of the sample variance, `sqrt((μ4 − σ⁴)/n)`.
    pub fn standard_error_of_variance(&self) -> f64 {
        ((self.central_m4 - self.variance * self.variance) / self.count as f64)
            .max(0.0)
            .sqrt()
    }
}

/// Standard error of a frequency estimated from `trials` Bernoulli(p) draws.
pub fn binomial_se(p: f64, trials: usize) -> f64 {
    let p = p.clamp(0.0, 1.0);
    (p * (1.0 - p) / trials as f64).sqrt()
}
