//! Small statistical helpers: order-stable summation, replication summaries,
//! and a Kolmogorov–Smirnov distance for distributional tests.
//!
//! Replication values are always materialized into a slice indexed by
//! replication number and then reduced with a fixed pairwise tree, so the
//! result is independent of how replications were scheduled across threads.

/// Normal 97.5% quantile, used for two-sided 95% confidence intervals.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Sums a slice with a fixed pairwise (cascade) tree.
///
/// Error grows like `O(log n)` in the number of terms instead of `O(n)` for
/// left-to-right folding, and the bracketing depends only on the slice
/// length, never on thread scheduling.
#[must_use]
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BASE: usize = 32;
    match xs.len() {
        0 => 0.0,
        n if n <= BASE => xs.iter().sum(),
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Mean, standard error, and confidence interval of a set of replications.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryStats {
    /// Number of replications.
    pub n: usize,
    /// Sample mean.
    pub mean: f64,
    /// Unbiased sample standard deviation.
    pub std_dev: f64,
    /// Standard error of the mean (`std_dev / sqrt(n)`).
    pub std_error: f64,
}

impl SummaryStats {
    /// Summarizes a slice of replication values.
    ///
    /// Uses a two-pass algorithm (mean first, then centered moments) with
    /// pairwise summation in both passes. A single observation gets a zero
    /// standard error; an empty slice gets NaN statistics.
    #[must_use]
    pub fn from_values(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { n, mean: f64::NAN, std_dev: f64::NAN, std_error: f64::NAN };
        }
        let mean = pairwise_sum(xs) / n as f64;
        if n == 1 {
            return Self { n, mean, std_dev: 0.0, std_error: 0.0 };
        }
        let sq: Vec<f64> = xs.iter().map(|&x| (x - mean) * (x - mean)).collect();
        let var = pairwise_sum(&sq) / (n - 1) as f64;
        let std_dev = var.max(0.0).sqrt();
        Self { n, mean, std_dev, std_error: std_dev / (n as f64).sqrt() }
    }

    /// Two-sided 95% confidence interval for the mean (normal approximation).
    #[must_use]
    pub fn ci95(&self) -> (f64, f64) {
        (self.mean - Z_95 * self.std_error, self.mean + Z_95 * self.std_error)
    }
}

/// One-sample Kolmogorov–Smirnov statistic `sup_x |F_m(x) - F(x)|`.
///
/// `samples` need not be sorted (a sorted copy is made); `cdf` is the
/// hypothesized continuous distribution function.
#[must_use]
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("KS samples must not contain NaN"));
    let m = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / m;
        let hi = (i + 1) as f64 / m;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    d
}

/// Asymptotic one-sample KS critical value at the 1% level, `1.6276/√m`.
#[must_use]
pub fn ks_critical_1pct(m: usize) -> f64 {
    1.627_624 / (m as f64).sqrt()
}
