//! Shapiro-Wilk W test after Royston's AS R94.

use statrs::distribution::{ContinuousCDF, Normal};

use super::{check_finite, sorted, Method, StatsError, TestResult};

const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
const G: [f64; 2] = [-2.273, 0.459];

const MIN_N: usize = 3;
const MAX_N: usize = 5000;

/// `c[0] + c[1] x + c[2] x^2 + ...`
fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Antisymmetric weights `a_1..a_{n/2}` for the lower half of the order
/// statistics (positive, applied to `x_(n+1-i) - x_(i)`).
fn weights(n: usize) -> Vec<f64> {
    let half = n / 2;
    if n == 3 {
        return vec![std::f64::consts::FRAC_1_SQRT_2];
    }
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let an = n as f64;
    let m: Vec<f64> = (1..=half)
        .map(|i| std_normal.inverse_cdf((i as f64 - 0.375) / (an + 0.25)))
        .collect();
    let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let rsn = 1.0 / an.sqrt();
    let a1 = poly(&C1, rsn) - m[0] / ssumm2;

    let mut a = vec![0.0; half];
    a[0] = a1;
    let (first_free, fac) = if n > 5 {
        let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
        a[1] = a2;
        let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2)).sqrt();
        (2, fac)
    } else {
        let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
        (1, fac)
    };
    for i in first_free..half {
        a[i] = -m[i] / fac;
    }
    a
}

/// Shapiro-Wilk normality test for `3 <= n <= 5000`.
///
/// The statistic is W; the p-value comes from Royston's normalizing
/// transformation (exact for n = 3).
pub fn shapiro_wilk(xs: &[f64]) -> Result<TestResult, StatsError> {
    let n = xs.len();
    if !(MIN_N..=MAX_N).contains(&n) {
        return Err(StatsError::SampleSize {
            n,
            min: MIN_N,
            max: MAX_N,
        });
    }
    check_finite(xs)?;
    let x = sorted(xs);
    let range = x[n - 1] - x[0];
    if range < 1e-19 * x[n - 1].abs().max(1.0) {
        return Err(StatsError::ZeroVariance);
    }
    // Scaling by the range keeps the sums well conditioned.
    let x: Vec<f64> = x.iter().map(|v| v / range).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    let ssq: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let a = weights(n);
    let num: f64 = a.iter().enumerate().map(|(i, ai)| ai * (x[n - 1 - i] - x[i])).sum();
    let w = (num * num / ssq).clamp(0.0, 1.0);

    let p = if n == 3 {
        const SIX_OVER_PI: f64 = 1.909_859_317_102_744;
        const ASIN_SQRT_3_4: f64 = std::f64::consts::FRAC_PI_3;
        (SIX_OVER_PI * (w.sqrt().asin() - ASIN_SQRT_3_4)).max(0.0)
    } else {
        let an = n as f64;
        let mut y = (1.0 - w).ln();
        let (m, s) = if n <= 11 {
            let gamma = poly(&G, an);
            if y >= gamma {
                return Ok(result(w, 1e-99, n));
            }
            y = -(gamma - y).ln();
            (poly(&C3, an), poly(&C4, an).exp())
        } else {
            let ln_n = an.ln();
            (poly(&C5, ln_n), poly(&C6, ln_n).exp())
        };
        Normal::new(m, s).unwrap().sf(y)
    };
    Ok(result(w, p.clamp(0.0, 1.0), n))
}

fn result(w: f64, p: f64, n: usize) -> TestResult {
    TestResult {
        statistic: w,
        p_value: p,
        method: if n == 3 {
            Method::Exact
        } else {
            Method::NormalApproximation
        },
        n1: n,
        n2: None,
    }
}
