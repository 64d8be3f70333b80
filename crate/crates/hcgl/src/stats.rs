//! Statistical helpers shared by the simulator and its tests: running
//! moments, Student-t confidence intervals, and a binned chi-square
//! goodness-of-fit test.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

/// Welford accumulator for mean and variance.
#[derive(Clone, Debug, Default)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            f64::NAN
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn sd(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Standard error of the mean.
    pub fn sem(&self) -> f64 {
        self.sd() / (self.n as f64).sqrt()
    }

    /// Half-width of the two-sided Student-t confidence interval for the
    /// mean at the given confidence level (e.g. 0.95).
    pub fn ci_half_width(&self, confidence: f64) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        t_quantile(1.0 - (1.0 - confidence) / 2.0, (self.n - 1) as f64) * self.sem()
    }
}

pub fn mean_ci(xs: &[f64], confidence: f64) -> (f64, f64) {
    let mut s = RunningStats::new();
    for &x in xs {
        s.push(x);
    }
    (s.mean(), s.ci_half_width(confidence))
}

/// Upper-p quantile helpers.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df).expect("valid t distribution").inverse_cdf(p)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("valid normal").inverse_cdf(p)
}

pub fn chi_squared_critical(df: f64, alpha: f64) -> f64 {
    ChiSquared::new(df).expect("valid chi-squared").inverse_cdf(1.0 - alpha)
}

/// Outcome of a binned chi-square goodness-of-fit test.
#[derive(Clone, Debug)]
pub struct ChiSquareOutcome {
    pub statistic: f64,
    pub df: f64,
    pub critical: f64,
    pub n_bins: usize,
    pub n_samples: u64,
    pub passed: bool,
}

/// Chi-square test of observed category counts against expected
/// probabilities. Categories are pooled greedily (in descending order of
/// expected probability) until every bin has expected count at least
/// `min_expected`; a trailing under-filled bin is merged into its
/// predecessor.
pub fn chi_square_gof(
    observed: &[u64],
    expected_probs: &[f64],
    min_expected: f64,
    alpha: f64,
) -> ChiSquareOutcome {
    assert_eq!(observed.len(), expected_probs.len());
    let n: u64 = observed.iter().sum();
    let nf = n as f64;
    let mut order: Vec<usize> = (0..observed.len()).collect();
    order.sort_by(|&a, &b| expected_probs[b].total_cmp(&expected_probs[a]));

    let mut bins: Vec<(f64, f64)> = Vec::new(); // (observed, expected)
    let mut acc_o = 0.0;
    let mut acc_e = 0.0;
    for &i in &order {
        acc_o += observed[i] as f64;
        acc_e += expected_probs[i] * nf;
        if acc_e >= min_expected {
            bins.push((acc_o, acc_e));
            acc_o = 0.0;
            acc_e = 0.0;
        }
    }
    if acc_e > 0.0 || acc_o > 0.0 {
        if let Some(last) = bins.last_mut() {
            last.0 += acc_o;
            last.1 += acc_e;
        } else {
            bins.push((acc_o, acc_e));
        }
    }
    assert!(bins.len() >= 2, "chi-square test needs at least two bins");

    let statistic: f64 = bins.iter().map(|&(o, e)| (o - e) * (o - e) / e).sum();
    let df = (bins.len() - 1) as f64;
    let critical = chi_squared_critical(df, alpha);
    ChiSquareOutcome {
        statistic,
        df,
        critical,
        n_bins: bins.len(),
        n_samples: n,
        passed: statistic <= critical,
    }
}
