//! Nonparametric statistics: normality screening, rank tests, false
//! discovery rate control and descriptive summaries.

mod fdr;
mod rank;
mod shapiro;

use std::fmt;

use thiserror::Error;

pub use fdr::bh_adjust;
pub use rank::{mann_whitney_u, wilcoxon_signed_rank, wilcoxon_signed_rank_diffs, EXACT_MAX_N};
pub use shapiro::shapiro_wilk;

/// Significance level used by [`summarize`] and as the CLI default.
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("sample size {n} outside the supported range {min}..={max}")]
    SampleSize { n: usize, min: usize, max: usize },
    #[error("sample has zero variance")]
    ZeroVariance,
    #[error("empty sample")]
    EmptySample,
    #[error("all paired differences are zero")]
    AllDifferencesZero,
    #[error("p-value {0} outside [0, 1]")]
    InvalidPValue(f64),
    #[error("sample contains a non-finite value")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Exact,
    NormalApproximation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    /// Two-sided p-value in `[0, 1]`.
    pub p_value: f64,
    pub method: Method,
    pub n1: usize,
    /// Second sample size for two-sample tests.
    pub n2: Option<usize>,
}

fn check_finite(xs: &[f64]) -> Result<(), StatsError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

/// Quantile with linear interpolation between order statistics
/// (`h = (n - 1) p + 1`, one-based). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Sorts a copy of `xs` (NaN-free) ascending.
pub fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("NaN in sample"));
    v
}

/// Median and interquartile bounds `(q25, median, q75)`.
pub fn quartiles(xs: &[f64]) -> (f64, f64, f64) {
    let s = sorted(xs);
    (
        quantile_sorted(&s, 0.25),
        quantile_sorted(&s, 0.5),
        quantile_sorted(&s, 0.75),
    )
}

pub fn median(xs: &[f64]) -> f64 {
    quantile_sorted(&sorted(xs), 0.5)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (divisor `n - 1`).
pub fn sample_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Descriptive summary chosen by a normality screen.
#[derive(Debug, Clone, PartialEq)]
pub enum Summary {
    MeanSd { mean: f64, sd: f64 },
    MedianIqr { median: f64, q25: f64, q75: f64 },
}

impl Summary {
    pub fn is_normal(&self) -> bool {
        matches!(self, Summary::MeanSd { .. })
    }
}

impl fmt::Display for Summary {
    /// `mean ± sd` or `median (IQR)`; precision defaults to 3 decimals.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prec = f.precision().unwrap_or(3);
        match *self {
            Summary::MeanSd { mean, sd } => write!(f, "{mean:.prec$} ± {sd:.prec$}"),
            Summary::MedianIqr { median, q25, q75 } => {
                write!(f, "{median:.prec$} ({:.prec$})", q75 - q25)
            }
        }
    }
}

/// Mean ± sd when Shapiro-Wilk does not reject normality at 0.05, median
/// (IQR) otherwise. Constant samples are summarized as median (IQR).
pub fn summarize(xs: &[f64]) -> Result<Summary, StatsError> {
    if xs.len() < 3 {
        return Err(StatsError::SampleSize {
            n: xs.len(),
            min: 3,
            max: usize::MAX,
        });
    }
    check_finite(xs)?;
    let normal = match shapiro_wilk(xs) {
        Ok(t) => t.p_value >= DEFAULT_ALPHA,
        Err(StatsError::ZeroVariance) => false,
        Err(StatsError::SampleSize { .. }) => false,
        Err(e) => return Err(e),
    };
    if normal {
        Ok(Summary::MeanSd {
            mean: mean(xs),
            sd: sample_sd(xs),
        })
    } else {
        let (q25, median, q75) = quartiles(xs);
        Ok(Summary::MedianIqr { median, q25, q75 })
    }
}
