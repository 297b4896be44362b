//! Mann-Whitney U and Wilcoxon signed-rank tests.
//!
//! Both use exact null distributions at small sizes and a normal
//! approximation with tie and continuity corrections beyond that.

use statrs::function::erf::erfc;

use super::{check_finite, Method, StatsError, TestResult};

/// Largest combined (Mann-Whitney) or nonzero-pair (Wilcoxon) sample size
/// that uses the exact null distribution.
pub const EXACT_MAX_N: usize = 20;

/// Average ranks (1-based) of `values`, plus the tie correction term
/// `Σ (t³ - t)` over tie groups.
fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    (ranks, tie_term)
}

/// Two-sided normal tail for a statistic with null mean `mu` and variance
/// `var`, with continuity correction.
fn normal_two_sided(stat: f64, mu: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((stat - mu).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Two-sided p from an exact null count table indexed by statistic value.
fn exact_two_sided(counts: &[f64], observed: usize) -> f64 {
    let total: f64 = counts.iter().sum();
    let lower: f64 = counts[..=observed].iter().sum();
    let upper: f64 = counts[observed..].iter().sum();
    (2.0 * lower.min(upper) / total).min(1.0)
}

/// Number of arrangements of `m` x's and `n` y's giving each value of
/// U = #{(x, y) : x > y}.
fn mann_whitney_counts(m: usize, n: usize) -> Vec<f64> {
    // table[j] holds the distribution for (i, j) while sweeping i.
    let mut prev: Vec<Vec<f64>> = (0..=n).map(|_| vec![1.0]).collect();
    for i in 1..=m {
        let mut cur: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        cur.push(vec![1.0]);
        for j in 1..=n {
            let mut dist = vec![0.0; i * j + 1];
            // Largest element is an x: it beats all j y's.
            for (u, &c) in prev[j].iter().enumerate() {
                dist[u + j] += c;
            }
            // Largest element is a y.
            for (u, &c) in cur[j - 1].iter().enumerate() {
                dist[u] += c;
            }
            cur.push(dist);
        }
        prev = cur;
    }
    prev.swap_remove(n)
}

/// Two-sided Mann-Whitney U test.
///
/// The statistic is `U = Σ [x > y] + ½ [x = y]` over all pairs. The exact
/// null distribution is used when `n1 + n2 <= 20` and there are no ties.
pub fn mann_whitney_u(xs: &[f64], ys: &[f64]) -> Result<TestResult, StatsError> {
    if xs.is_empty() || ys.is_empty() {
        return Err(StatsError::EmptySample);
    }
    check_finite(xs)?;
    check_finite(ys)?;
    let (n1, n2) = (xs.len(), ys.len());
    let pooled: Vec<f64> = xs.iter().chain(ys.iter()).copied().collect();
    let (ranks, tie_term) = midranks(&pooled);
    let rank_sum_x: f64 = ranks[..n1].iter().sum();
    let u = rank_sum_x - (n1 * (n1 + 1)) as f64 / 2.0;

    let big_n = n1 + n2;
    let (p, method) = if big_n <= EXACT_MAX_N && tie_term == 0.0 {
        let counts = mann_whitney_counts(n1, n2);
        (exact_two_sided(&counts, u.round() as usize), Method::Exact)
    } else {
        let nf = big_n as f64;
        let var = (n1 * n2) as f64 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
        (
            normal_two_sided(u, (n1 * n2) as f64 / 2.0, var),
            Method::NormalApproximation,
        )
    };
    Ok(TestResult {
        statistic: u,
        p_value: p,
        method,
        n1,
        n2: Some(n2),
    })
}

/// Wilcoxon signed-rank test on paired samples `(x, y)`, testing `x - y`.
pub fn wilcoxon_signed_rank(pairs: &[(f64, f64)]) -> Result<TestResult, StatsError> {
    let diffs: Vec<f64> = pairs.iter().map(|(x, y)| x - y).collect();
    wilcoxon_signed_rank_diffs(&diffs)
}

/// Wilcoxon signed-rank test on precomputed paired differences.
///
/// Zero differences are dropped and tied magnitudes share average ranks.
/// The statistic is `min(W+, W-)`; the exact null distribution over all
/// `2^n` sign patterns is used when `n <= 20`.
pub fn wilcoxon_signed_rank_diffs(diffs: &[f64]) -> Result<TestResult, StatsError> {
    check_finite(diffs)?;
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    if nonzero.is_empty() {
        return Err(StatsError::AllDifferencesZero);
    }
    let n = nonzero.len();
    let magnitudes: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let (ranks, tie_term) = midranks(&magnitudes);
    let w_plus: f64 = ranks
        .iter()
        .zip(&nonzero)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let statistic = w_plus.min(total - w_plus);

    let (p, method) = if n <= EXACT_MAX_N {
        // Midranks are multiples of 1/2, so doubled ranks are integers.
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let max_sum: usize = doubled.iter().sum();
        let mut counts = vec![0.0; max_sum + 1];
        counts[0] = 1.0;
        let mut reach = 0;
        for &r in &doubled {
            for s in (0..=reach).rev() {
                if counts[s] > 0.0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        (exact_two_sided(&counts, (2.0 * w_plus).round() as usize), Method::Exact)
    } else {
        let nf = n as f64;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        (normal_two_sided(w_plus, total / 2.0, var), Method::NormalApproximation)
    };
    Ok(TestResult {
        statistic,
        p_value: p,
        method,
        n1: n,
        n2: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mann_whitney_small_exact() {
        let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.method, Method::Exact);
        assert!((r.p_value - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn mann_whitney_identical_samples_give_p_one() {
        let xs = [3.0, 1.0, 4.0, 1.5, 9.0];
        let r = mann_whitney_u(&xs, &xs).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(mann_whitney_u(&[2.0], &[2.0]).unwrap().p_value, 1.0);
    }

    #[test]
    fn mann_whitney_swap_symmetry() {
        let xs = [0.2, 1.4, 2.2, 5.0, 3.3];
        let ys = [1.0, 6.1, 7.7];
        let a = mann_whitney_u(&xs, &ys).unwrap();
        let b = mann_whitney_u(&ys, &xs).unwrap();
        assert_eq!(a.p_value, b.p_value);
        assert_eq!(a.statistic + b.statistic, 15.0);
    }

    #[test]
    fn mann_whitney_rejects_empty() {
        assert_eq!(mann_whitney_u(&[], &[1.0]), Err(StatsError::EmptySample));
    }

    #[test]
    fn mann_whitney_large_sample_matches_reference() {
        // scipy.stats.mannwhitneyu(xs, ys, method="asymptotic", use_continuity=True)
        let xs: Vec<f64> = (0..15).map(|i| i as f64 * 1.3).collect();
        let ys: Vec<f64> = (0..12).map(|i| i as f64 * 1.1 + 4.0).collect();
        let r = mann_whitney_u(&xs, &ys).unwrap();
        assert_eq!(r.method, Method::NormalApproximation);
        assert_eq!(r.statistic, 81.5);
        assert!((r.p_value - 0.6962262809).abs() < 1e-8, "{}", r.p_value);
    }

    #[test]
    fn wilcoxon_small_exact() {
        let r = wilcoxon_signed_rank_diffs(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 0.25).abs() < 1e-15);

        let single = wilcoxon_signed_rank_diffs(&[5.0]).unwrap();
        assert_eq!(single.p_value, 1.0);

        let neg = wilcoxon_signed_rank_diffs(&[-1.0, -2.0, -3.0]).unwrap();
        assert_eq!(neg.p_value, r.p_value);
    }

    #[test]
    fn wilcoxon_drops_zeros_and_rejects_all_zero() {
        let a = wilcoxon_signed_rank_diffs(&[0.0, 1.0, 0.0, 2.0, 3.0]).unwrap();
        assert_eq!(a.n1, 3);
        assert!((a.p_value - 0.25).abs() < 1e-15);
        assert_eq!(
            wilcoxon_signed_rank_diffs(&[0.0, 0.0]),
            Err(StatsError::AllDifferencesZero)
        );
        let pairs = [(1.0, 1.0), (2.5, 2.5)];
        assert_eq!(wilcoxon_signed_rank(&pairs), Err(StatsError::AllDifferencesZero));
    }

    #[test]
    fn wilcoxon_large_sample_matches_reference() {
        // scipy.stats.wilcoxon(d, method="approx", correction=True)
        let d: Vec<f64> = (1..=25)
            .map(|i| if i % 3 == 0 { -(i as f64) } else { i as f64 * 0.5 })
            .collect();
        let r = wilcoxon_signed_rank_diffs(&d).unwrap();
        assert_eq!(r.method, Method::NormalApproximation);
        assert!((r.statistic - 144.0).abs() < 1e-12, "{}", r.statistic);
        assert!((r.p_value - 0.6281556537).abs() < 1e-8, "{}", r.p_value);
    }

    #[test]
    fn midranks_average_ties() {
        let (r, t) = midranks(&[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(r, vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(t, 6.0);
    }
}
