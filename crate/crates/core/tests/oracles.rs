//! Independent oracles for the special functions and the avoidance
//! probabilities: closed forms, quadrature and Monte Carlo.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use sttk::world::ObstacleSnapshot;
use sttk::{ncx2_cdf, ncx2_pdf, ncx2_quantile, DVector, Ncx2Params};

fn params(n: u32, lambda: f64) -> Ncx2Params {
    Ncx2Params::new(n, lambda).unwrap()
}

fn cdf(x: f64, n: u32, lambda: f64) -> f64 {
    ncx2_cdf(x, params(n, lambda)).unwrap()
}

fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

fn big_phi(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

// ‖Z‖ ≤ ρ for Z ~ N(m·e1, I) in one and three dimensions.
fn ncx2_cdf_dof1(x: f64, lambda: f64) -> f64 {
    let (rho, m) = (x.sqrt(), lambda.sqrt());
    big_phi(rho - m) - big_phi(-rho - m)
}

fn ncx2_cdf_dof3(x: f64, lambda: f64) -> f64 {
    let (rho, m) = (x.sqrt(), lambda.sqrt());
    big_phi(rho - m) - big_phi(-rho - m) + (phi(rho + m) - phi(rho - m)) / m
}

// Rice-distribution mass on [0, ρ], by Simpson in r and the trapezoid rule
// for the angular average e^{-z} I0(z).
fn ncx2_cdf_dof2_quadrature(x: f64, lambda: f64) -> f64 {
    let (rho, m) = (x.sqrt(), lambda.sqrt());
    const ANGLES: usize = 512;
    let i0e = |z: f64| {
        let mut s = 0.0;
        for k in 0..ANGLES {
            let th = 2.0 * PI * k as f64 / ANGLES as f64;
            s += (z * (th.cos() - 1.0)).exp();
        }
        s / ANGLES as f64
    };
    let f = |r: f64| r * (-0.5 * (r - m) * (r - m)).exp() * i0e(r * m);
    let intervals = 4000;
    let h = rho / intervals as f64;
    let mut s = f(0.0) + f(rho);
    for i in 1..intervals {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    s * h / 3.0
}

#[test]
fn odd_dof_matches_normal_closed_forms() {
    for &lambda in &[0.1, 0.5, 1.0, 4.0, 25.0, 100.0] {
        for i in 1..=60 {
            let x = 0.05 * (i * i) as f64;
            let e1 = (cdf(x, 1, lambda) - ncx2_cdf_dof1(x, lambda)).abs();
            let e3 = (cdf(x, 3, lambda) - ncx2_cdf_dof3(x, lambda)).abs();
            assert!(e1 <= 1e-12, "n=1 x={x} lambda={lambda}: {e1:e}");
            assert!(e3 <= 1e-12, "n=3 x={x} lambda={lambda}: {e3:e}");
        }
    }
}

#[test]
fn dof2_matches_quadrature() {
    for &lambda in &[0.25, 3.0, 16.0, 64.0] {
        for &x in &[0.1, 1.0, 3.0, 8.0, 20.0, 60.0, 120.0] {
            let err = (cdf(x, 2, lambda) - ncx2_cdf_dof2_quadrature(x, lambda)).abs();
            assert!(err <= 1e-11, "x={x} lambda={lambda}: {err:e}");
        }
    }
}

#[test]
fn central_case_matches_statrs() {
    for n in 1..=12u32 {
        let law = ChiSquared::new(n as f64).unwrap();
        for i in 1..=40 {
            let x = 0.75 * i as f64;
            let err = (cdf(x, n, 0.0) - law.cdf(x)).abs();
            assert!(err <= 1e-10, "n={n} x={x}: {err:e}");
        }
    }
}

#[test]
fn pdf_is_the_derivative_of_the_cdf() {
    let h = 1e-5;
    let fd = |x: f64, n: u32, l: f64| (cdf(x + h, n, l) - cdf(x - h, n, l)) / (2.0 * h);
    let pdf = |x: f64, n: u32, l: f64| ncx2_pdf(x, params(n, l)).unwrap();
    assert!((pdf(1.0, 2, 4.0) - fd(1.0, 2, 4.0)).abs() <= 1e-6);
    for n in 1..=4u32 {
        for &lambda in &[0.0, 0.7, 4.0, 30.0] {
            for &x in &[0.3, 1.0, 2.5, 7.0, 15.0, 40.0] {
                let err = (pdf(x, n, lambda) - fd(x, n, lambda)).abs();
                assert!(err <= 1e-6, "n={n} x={x} lambda={lambda}: {err:e}");
            }
        }
    }
}

fn sample_ncx2(n: u32, lambda: f64, samples: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift = (lambda / n as f64).sqrt();
    (0..samples)
        .map(|_| {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (z + shift) * (z + shift)
                })
                .sum()
        })
        .collect()
}

#[test]
fn monte_carlo_cdf_and_quantile() {
    let mut draws = sample_ncx2(2, 3.0, 10_000_000, 17);
    let below = draws.iter().filter(|&&s| s <= 4.0).count() as f64 / draws.len() as f64;
    assert!((below - cdf(4.0, 2, 3.0)).abs() <= 5e-4, "empirical {below}");

    let k = (0.9 * draws.len() as f64) as usize;
    let (_, &mut q_emp, _) = draws.select_nth_unstable_by(k, f64::total_cmp);
    let q = ncx2_quantile(0.9, params(2, 3.0)).unwrap();
    assert!((q - q_emp).abs() <= 2e-3 * q.max(1.0), "quantile {q} vs empirical {q_emp}");
}

fn snapshot(mu: &[f64], sigma: f64, r_o: f64) -> ObstacleSnapshot {
    ObstacleSnapshot {
        mu: DVector::from_column_slice(mu),
        sigma,
        r_o,
        mu_dot: DVector::zeros(mu.len()),
        sigma_dot: 0.0,
    }
}

// Fraction of Gaussian obstacle centers farther than `radius` from x.
fn mc_avoid(x: &[f64], snap: &ObstacleSnapshot, radius: f64, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..samples {
        let d2: f64 = x
            .iter()
            .zip(snap.mu.iter())
            .map(|(&xi, &mi)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                let o = mi + snap.sigma * z;
                (xi - o) * (xi - o)
            })
            .sum();
        hits += (d2 >= radius * radius) as usize;
    }
    hits as f64 / samples as f64
}

#[test]
fn q_center_matches_monte_carlo() {
    let snap = snapshot(&[0.0, 0.0], 0.5, 0.3);
    let x = [2.0 * 0.6, 2.0 * 0.8];
    let q = snap.q_center(&DVector::from_column_slice(&x), 0.06).unwrap();
    let samples = 1_000_000;
    let emp = mc_avoid(&x, &snap, 0.36, samples, 3);
    let se = (q * (1.0 - q) / samples as f64).sqrt().max(1.0 / samples as f64);
    assert!((emp - q).abs() <= 3.0 * se, "q {q} vs MC {emp} (se {se:e})");
}

#[test]
fn q_hat_matches_monte_carlo_on_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let samples = 200_000;
    for case in 0..8u64 {
        let dim = 2 + (case % 2) as usize;
        let u = |rng: &mut ChaCha8Rng| -> f64 { rand::Rng::gen_range(rng, 0.0..1.0) };
        let mu: Vec<f64> = (0..dim).map(|_| 2.0 * u(&mut rng) - 1.0).collect();
        let x: Vec<f64> = (0..dim).map(|_| 2.0 * u(&mut rng) - 1.0).collect();
        let snap = snapshot(&mu, 0.1 + 0.5 * u(&mut rng), 0.05 + 0.5 * u(&mut rng));
        let q = snap.q_hat_point(&DVector::from_column_slice(&x)).unwrap();
        let emp = mc_avoid(&x, &snap, snap.r_o, samples, 1000 + case);
        let se = (q * (1.0 - q) / samples as f64).sqrt().max(1.0 / samples as f64);
        assert!((emp - q).abs() <= 3.0 * se, "case {case}: q {q} vs MC {emp}");
    }
}

#[test]
fn d_hat_matches_empirical_quantile() {
    // P(‖x − O‖ ≥ r_o + d̂) = ε, so r_o + d̂ is the (1−ε) quantile of ‖x − O‖.
    let snap = snapshot(&[0.4, -0.2], 0.3, 0.15);
    let x = [1.0, 0.5];
    let eps = 0.8;
    let d_hat = snap.d_hat(&DVector::from_column_slice(&x), eps).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut dist: Vec<f64> = (0..1_000_000)
        .map(|_| {
            let (zx, zy): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
            let dx = x[0] - (snap.mu[0] + snap.sigma * zx);
            let dy = x[1] - (snap.mu[1] + snap.sigma * zy);
            dx.hypot(dy)
        })
        .collect();
    let k = ((1.0 - eps) * dist.len() as f64) as usize;
    let (_, &mut emp, _) = dist.select_nth_unstable_by(k, f64::total_cmp);
    assert!((snap.r_o + d_hat - emp).abs() <= 2e-3, "{} vs {emp}", snap.r_o + d_hat);
}
