use proptest::prelude::*;
use sttk::tube::{radius_from_distance, soft_min_distance, tangential_vector, theta};
use sttk::{ncx2_cdf, ncx2_quantile, DVector, Ncx2Params, ObstacleSnapshot, TubeGains};

fn cdf(x: f64, n: u32, lambda: f64) -> f64 {
    ncx2_cdf(x, Ncx2Params::new(n, lambda).unwrap()).unwrap()
}

fn gains(nu: f64, r_max: f64) -> TubeGains {
    TubeGains {
        k1: 0.5,
        nu,
        r_min: 0.5 * r_max,
        r_max,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn cdf_is_a_monotone_probability(n in 1u32..6, lambda in 0.0f64..200.0, a in 0.0f64..300.0, b in 0.0f64..300.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (f_lo, f_hi) = (cdf(lo, n, lambda), cdf(hi, n, lambda));
        prop_assert!((0.0..=1.0).contains(&f_lo) && (0.0..=1.0).contains(&f_hi));
        prop_assert!(f_lo <= f_hi);
    }

    #[test]
    fn cdf_decreases_with_noncentrality(n in 1u32..6, l in 0.01f64..100.0, p in 0.02f64..0.98) {
        let x = ncx2_quantile(p, Ncx2Params::new(n, l).unwrap()).unwrap();
        let h = 1e-4;
        let d = (cdf(x, n, l + h) - cdf(x, n, l - h)) / (2.0 * h);
        prop_assert!(d.is_finite() && d < 0.0, "dF/dlambda = {}", d);
    }

    #[test]
    fn quantile_inverts_cdf(n in 1u32..6, lambda in 0.0f64..5000.0, p in 0.001f64..0.999) {
        let x = ncx2_quantile(p, Ncx2Params::new(n, lambda).unwrap()).unwrap();
        prop_assert!(x >= 0.0);
        prop_assert!((cdf(x, n, lambda) - p).abs() <= 1e-9);
    }

    #[test]
    fn avoidance_probabilities_are_probabilities(
        mx in -3.0f64..3.0, my in -3.0f64..3.0,
        sigma in 0.01f64..5.0, r_o in 0.0f64..2.0, r_min in 0.001f64..1.0,
    ) {
        let snap = ObstacleSnapshot {
            mu: DVector::from_column_slice(&[0.2, -0.1]),
            sigma,
            r_o,
            mu_dot: DVector::zeros(2),
            sigma_dot: 0.0,
        };
        let x = DVector::from_column_slice(&[mx, my]);
        let q = snap.q_center(&x, r_min).unwrap();
        let q_hat = snap.q_hat_point(&x).unwrap();
        prop_assert!((0.0..=1.0).contains(&q) && (0.0..=1.0).contains(&q_hat));
        // a larger safety ball can only lower the avoid probability
        prop_assert!(q <= q_hat + 1e-15);
    }

    #[test]
    fn soft_min_bounds(ds in prop::collection::vec(-1.0f64..5.0, 1..20), nu in 1.0f64..60.0) {
        let g = gains(nu, 1.0);
        let d = soft_min_distance(&ds, &g);
        let min = ds.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(d <= min + 1e-12);
        prop_assert!(d >= min - (ds.len() as f64).ln() / nu - 1e-12);
    }

    #[test]
    fn radius_stays_below_cap_and_clearance(d in 0.05f64..10.0, nu in 5.0f64..60.0, r_max in 0.05f64..2.0) {
        let g = gains(nu, r_max);
        if let Ok(r) = radius_from_distance(d, &g) {
            prop_assert!(r > 0.0);
            prop_assert!(r <= r_max && r <= d);
        }
    }

    #[test]
    fn switching_function_is_nonnegative_and_vanishes_above_threshold(q in 1e-6f64..1.0, p_d in 0.5f64..0.99999) {
        let th = theta(q, p_d).unwrap();
        prop_assert!(th >= 0.0);
        if q > p_d {
            prop_assert_eq!(th, 0.0);
        }
    }

    #[test]
    fn tangential_direction_is_unit_and_orthogonal(
        m in prop::collection::vec(-5.0f64..5.0, 2..5),
        g in prop::collection::vec(-5.0f64..5.0, 5),
    ) {
        let m = DVector::from_vec(m);
        prop_assume!(m.norm() > 1e-6);
        let goal = DVector::from_iterator(m.len(), g.into_iter().take(m.len()));
        let v = tangential_vector(&m, &goal, None);
        prop_assert!((v.norm() - 1.0).abs() <= 1e-12);
        prop_assert!(v.dot(&m).abs() <= 1e-12 * m.norm());
    }
}
