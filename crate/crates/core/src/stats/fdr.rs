use super::StatsError;

/// Benjamini-Hochberg step-up adjustment.
///
/// `adj(p_(i)) = min(1, min_{j >= i} m p_(j) / j)` over the ascending order,
/// returned in input order.
pub fn bh_adjust(ps: &[f64]) -> Result<Vec<f64>, StatsError> {
    if let Some(&p) = ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(StatsError::InvalidPValue(p));
    }
    let m = ps.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| ps[a].partial_cmp(&ps[b]).unwrap());

    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank0, &i) in order.iter().enumerate().rev() {
        let candidate = ps[i] * m as f64 / (rank0 + 1) as f64;
        running = running.min(candidate);
        // Mathematically m p_(j) / j >= p_(i); the floor only absorbs rounding.
        adjusted[i] = running.min(1.0).max(ps[i]);
    }
    Ok(adjusted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_step_up() {
        let adj = bh_adjust(&[0.01, 0.02, 0.04]).unwrap();
        let expected = [0.03, 0.03, 0.04];
        for (a, e) in adj.iter().zip(expected) {
            assert!((a - e).abs() < 1e-15, "{adj:?}");
        }
    }

    #[test]
    fn rounding_never_pushes_adjusted_below_raw() {
        let ps = vec![0.94; 49];
        for (a, p) in bh_adjust(&ps).unwrap().iter().zip(&ps) {
            assert!(a >= p, "{a} < {p}");
        }
    }

    #[test]
    fn order_is_preserved() {
        let adj = bh_adjust(&[0.04, 0.01, 0.02]).unwrap();
        assert!((adj[0] - 0.04).abs() < 1e-15);
        assert!((adj[1] - 0.03).abs() < 1e-15);
        assert!((adj[2] - 0.03).abs() < 1e-15);
    }

    #[test]
    fn trivial_cases() {
        assert_eq!(bh_adjust(&[0.3]).unwrap(), vec![0.3]);
        assert_eq!(bh_adjust(&[0.2; 4]).unwrap(), vec![0.2; 4]);
        assert_eq!(bh_adjust(&[]).unwrap(), Vec::<f64>::new());
        assert_eq!(bh_adjust(&[0.9, 0.8]).unwrap(), vec![0.9, 0.9]);
    }

    #[test]
    fn out_of_range_p_is_rejected() {
        assert_eq!(bh_adjust(&[0.1, 1.5]), Err(StatsError::InvalidPValue(1.5)));
        assert!(bh_adjust(&[f64::NAN]).is_err());
    }
}
