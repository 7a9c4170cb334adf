//! Non-central chi-squared distribution: CDF, density and quantile.
//!
//! The CDF is evaluated as a Poisson(λ/2) mixture of central chi-squared CDFs,
//! F(x; n, λ) = Σ_k w_k · P(n/2 + k, x/2), where P is the regularized lower
//! incomplete gamma function. Summation starts at the modal Poisson index and
//! walks outwards in both directions, stepping P with the recurrence
//! P(a + 1, z) = P(a, z) − z^a e^{−z} / Γ(a + 1) so only one incomplete gamma
//! evaluation is needed per call.

use crate::error::{Error, Result};

/// Residual Poisson mass below which the mixture series is truncated.
const SERIES_TAIL: f64 = 1e-14;
/// Relative precision target for the incomplete gamma routines.
const GAMMA_EPS: f64 = 1e-16;
const QUANTILE_MAX_ITER: usize = 200;
const QUANTILE_TOL: f64 = 1e-12;
/// Residual below which one more Newton step is taken without re-checking.
const NEWTON_ACCEPT: f64 = 1e-8;

/// Degrees of freedom and non-centrality of a non-central chi-squared law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ncx2Params {
    dof: u32,
    noncentrality: f64,
}

impl Ncx2Params {
    pub fn new(dof: u32, noncentrality: f64) -> Result<Self> {
        if dof == 0 {
            return Err(Error::Domain("degrees of freedom must be at least 1".into()));
        }
        if !noncentrality.is_finite() || noncentrality < 0.0 {
            return Err(Error::Domain(format!(
                "non-centrality must be finite and non-negative, got {noncentrality}"
            )));
        }
        Ok(Self { dof, noncentrality })
    }

    pub fn dof(&self) -> u32 {
        self.dof
    }

    pub fn noncentrality(&self) -> f64 {
        self.noncentrality
    }

    fn half_dof(&self) -> f64 {
        0.5 * self.dof as f64
    }
}

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    #[allow(clippy::excessive_precision)]
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma P(a, z) for `a > 0`, `z >= 0`.
pub fn gamma_p(a: f64, z: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    if z < a + 1.0 {
        gamma_p_series(a, z)
    } else {
        1.0 - gamma_q_continued_fraction(a, z)
    }
}

/// Regularized upper incomplete gamma Q(a, z) = 1 − P(a, z).
pub fn gamma_q(a: f64, z: f64) -> f64 {
    if z <= 0.0 {
        return 1.0;
    }
    if z < a + 1.0 {
        1.0 - gamma_p_series(a, z)
    } else {
        gamma_q_continued_fraction(a, z)
    }
}

fn gamma_p_series(a: f64, z: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..10_000 {
        ap += 1.0;
        term *= z / ap;
        sum += term;
        if term.abs() < sum.abs() * GAMMA_EPS {
            break;
        }
    }
    (sum.ln() - z + a * z.ln() - ln_gamma(a)).exp()
}

// Modified Lentz evaluation of the continued fraction for Q(a, z).
fn gamma_q_continued_fraction(a: f64, z: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = z + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < GAMMA_EPS {
            break;
        }
    }
    (-z + a * z.ln() - ln_gamma(a)).exp() * h
}

/// CDF of the central chi-squared law with `dof` degrees of freedom.
pub fn chi2_cdf(x: f64, dof: u32) -> f64 {
    gamma_p(0.5 * dof as f64, 0.5 * x)
}

/// ln of the Poisson(mean) mass at k.
fn ln_poisson(k: f64, mean: f64) -> f64 {
    if mean == 0.0 {
        return if k == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k * mean.ln() - mean - ln_gamma(k + 1.0)
}

/// ln of z^b e^{-z} / Γ(b + 1), the increment of the incomplete gamma recurrence.
fn ln_gamma_step(b: f64, z: f64) -> f64 {
    b * z.ln() - z - ln_gamma(b + 1.0)
}

fn check_x(x: f64) -> Result<()> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("argument must be non-negative, got {x}")));
    }
    Ok(())
}

/// Non-central chi-squared CDF F(x; n, λ).
pub fn ncx2_cdf(x: f64, params: Ncx2Params) -> Result<f64> {
    check_x(x)?;
    Ok(mixture_sums(x, params).0)
}

/// F(x) together with a density estimate accumulated from the same Poisson
/// terms. The density shares the CDF's truncation, so it is only accurate to
/// the series tail; the quantile uses it for Newton steps, never as a result.
fn mixture_sums(x: f64, params: Ncx2Params) -> (f64, f64) {
    if x == 0.0 {
        return (0.0, f64::NAN);
    }
    if x.is_infinite() {
        return (1.0, 0.0);
    }
    let half_x = 0.5 * x;
    let mean = 0.5 * params.noncentrality;
    let a0 = params.half_dof();
    let k_mode = mean.floor();

    let p_mode = gamma_p(a0 + k_mode, half_x);
    let w_mode = ln_poisson(k_mode, mean).exp();
    let mut sum = w_mode * p_mode;
    // central density of n + 2k degrees of freedom: z^(a-1) e^-z / (2 Γ(a)), a = a0 + k
    let mut density = w_mode * 0.5 * ln_gamma_step(a0 + k_mode - 1.0, half_x).exp();

    // Upward: P decreases with k, so the remainder is bounded by P_k times the
    // geometric bound on the Poisson upper tail.
    let mut k = k_mode;
    let mut w = w_mode;
    let mut p = p_mode;
    let mut step = ln_gamma_step(a0 + k, half_x).exp();
    loop {
        p -= step;
        if p <= 0.0 {
            break;
        }
        // weight ratios decrease with k, so the current one bounds the rest
        let ratio = mean / (k + 1.0);
        w *= ratio;
        density += w * 0.5 * step;
        step *= half_x / (a0 + k + 1.0);
        k += 1.0;
        sum += w * p;
        if ratio < 1.0 && p * w * ratio / (1.0 - ratio) < SERIES_TAIL {
            break;
        }
        if w == 0.0 {
            break;
        }
    }

    // Downward: P grows towards 1, remainder bounded by the Poisson lower tail.
    let mut k = k_mode;
    let mut w = w_mode;
    let mut p = p_mode;
    // step holds z^(a-1) e^-z / Γ(a) for a = a0 + k
    let mut step = if k > 0.0 {
        ln_gamma_step(a0 + k - 1.0, half_x).exp()
    } else {
        0.0
    };
    let inv_mean = 1.0 / mean;
    let inv_half_x = 1.0 / half_x;
    while k > 0.0 {
        p += step;
        w *= k * inv_mean;
        k -= 1.0;
        sum += w * p.min(1.0);
        step *= (a0 + k) * inv_half_x;
        density += w * 0.5 * step;
        if k == 0.0 {
            break;
        }
        let ratio = k * inv_mean;
        if ratio < 1.0 && w * ratio / (1.0 - ratio) < SERIES_TAIL {
            break;
        }
    }

    (sum.clamp(0.0, 1.0), density)
}

/// Non-central chi-squared density.
///
/// Positive and finite for `x > 0`; at `x = 0` the density is `+inf` for one
/// degree of freedom, `e^{-λ/2}/2` for two and zero otherwise.
pub fn ncx2_pdf(x: f64, params: Ncx2Params) -> Result<f64> {
    check_x(x)?;
    let n = params.dof;
    let mean = 0.5 * params.noncentrality;
    if x == 0.0 {
        return Ok(match n {
            1 => f64::INFINITY,
            2 => 0.5 * (-mean).exp(),
            _ => 0.0,
        });
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    let half_x = 0.5 * x;
    let a0 = params.half_dof();
    let k_mode = mean.floor();

    // central density of dof n + 2k is 0.5 * z^(b) e^-z / Γ(b + 1), b = n/2 + k - 1
    let central = |k: f64| 0.5 * ln_gamma_step(a0 + k - 1.0, half_x).exp();
    let w_mode = ln_poisson(k_mode, mean).exp();
    let d_mode = central(k_mode);
    let mut sum = w_mode * d_mode;

    let mut k = k_mode;
    let mut w = w_mode;
    let mut d = d_mode;
    loop {
        d *= half_x / (a0 + k);
        w *= mean / (k + 1.0);
        k += 1.0;
        let term = w * d;
        sum += term;
        let ratio = mean / (k + 1.0);
        if w == 0.0 || (ratio < 1.0 && term <= sum * 1e-17 && k > half_x) {
            break;
        }
        if k > k_mode + 1e6 {
            break;
        }
    }

    let mut k = k_mode;
    let mut w = w_mode;
    let mut d = d_mode;
    while k > 0.0 {
        d *= (a0 + k - 1.0) / half_x;
        w *= k / mean;
        k -= 1.0;
        let term = w * d;
        sum += term;
        let ratio = k / mean;
        if ratio < 1.0 && term <= sum * 1e-17 && a0 + k - 1.0 < half_x {
            break;
        }
    }
    Ok(sum)
}

/// Standard normal quantile (Acklam's rational approximation, relative
/// error below 1.2e-9). Only used to seed root finding.
fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < 0.02425 {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - 0.02425 {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Wilson-Hilferty cube-root normal approximation to the quantile.
fn quantile_seed(p: f64, params: Ncx2Params) -> f64 {
    let n = params.dof as f64;
    let lambda = params.noncentrality;
    let h = 2.0 * (n + 2.0 * lambda) / (9.0 * (n + lambda) * (n + lambda));
    let base = 1.0 - h + normal_quantile(p) * h.sqrt();
    (n + lambda) * base.max(0.05).powi(3)
}

/// Inverse CDF: the x with F(x; n, λ) = p, for `0 < p < 1`.
///
/// Newton iteration on s = sqrt(x), where the law is close to normal for
/// large λ, started from a cube-root normal approximation. A bracket
/// [lo, hi] is kept throughout; steps leaving it fall back to bisection, or
/// to expansion while no upper end is known.
pub fn ncx2_quantile(p: f64, params: Ncx2Params) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("probability must lie in (0, 1), got {p}")));
    }
    let mut lo = 0.0_f64;
    let mut hi = f64::INFINITY;
    let mut s = quantile_seed(p, params).sqrt();
    for _ in 0..QUANTILE_MAX_ITER {
        let x = s * s;
        let (f, density) = mixture_sums(x, params);
        let resid = f - p;
        if resid.abs() <= QUANTILE_TOL {
            return Ok(x);
        }
        if resid < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        if hi.is_finite() && hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(x);
        }
        let slope = 2.0 * s * density;
        let newton = if slope.is_finite() && slope > 0.0 {
            s - resid / slope
        } else {
            f64::NAN
        };
        if resid.abs() <= NEWTON_ACCEPT && newton > lo && newton < hi {
            // quadratic convergence: the residual at `newton` is O(resid²)
            return Ok(newton * newton);
        }
        s = if newton > lo && newton < hi {
            newton
        } else if hi.is_finite() {
            0.5 * (lo + hi)
        } else {
            2.0 * lo + 1.0
        };
    }
    Err(Error::Convergence(format!(
        "quantile refinement exceeded {QUANTILE_MAX_ITER} iterations (p = {p}, n = {}, λ = {})",
        params.dof, params.noncentrality
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params(n: u32, lambda: f64) -> Ncx2Params {
        Ncx2Params::new(n, lambda).unwrap()
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(Ncx2Params::new(0, 1.0).is_err());
        assert!(Ncx2Params::new(2, -1.0).is_err());
        assert!(Ncx2Params::new(2, f64::NAN).is_err());
        assert!(ncx2_cdf(-1.0, params(2, 0.0)).is_err());
        assert!(ncx2_pdf(-0.5, params(2, 0.0)).is_err());
        assert!(ncx2_quantile(0.0, params(2, 0.0)).is_err());
        assert!(ncx2_quantile(1.0, params(2, 0.0)).is_err());
    }

    #[test]
    fn central_reductions() {
        assert_abs_diff_eq!(
            ncx2_cdf(2.0, params(2, 0.0)).unwrap(),
            1.0 - (-1.0f64).exp(),
            epsilon = 1e-14
        );
        assert_eq!(ncx2_cdf(0.0, params(3, 5.0)).unwrap(), 0.0);
        assert_abs_diff_eq!(
            ncx2_pdf(2.0, params(2, 0.0)).unwrap(),
            0.5 * (-1.0f64).exp(),
            epsilon = 1e-14
        );
        assert_eq!(ncx2_pdf(0.0, params(3, 0.0)).unwrap(), 0.0);
        assert_abs_diff_eq!(
            ncx2_quantile(0.5, params(2, 0.0)).unwrap(),
            2.0 * 2.0f64.ln(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn ln_gamma_matches_factorials() {
        let mut fact = 1.0f64;
        for k in 1..30u32 {
            fact *= k as f64;
            assert_abs_diff_eq!(ln_gamma(k as f64 + 1.0), fact.ln(), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-14);
    }

    #[test]
    fn odd_dof_central_matches_erf_form() {
        // n = 1: F(x) = erf(sqrt(x/2)) = 1 - 2 Q(0.5, x/2)... use P(1/2, z) identity
        // checked against the n = 3 recurrence F3 = F1 - sqrt(2x/pi) e^{-x/2}
        for &x in &[0.1, 0.7, 1.5, 3.0, 8.0, 20.0] {
            let f1 = chi2_cdf(x, 1);
            let f3 = chi2_cdf(x, 3);
            let expected = f1 - (2.0 * x / std::f64::consts::PI).sqrt() * (-0.5 * x).exp();
            assert_abs_diff_eq!(f3, expected, epsilon = 1e-13);
        }
    }

    #[test]
    fn far_tail_stays_in_unit_interval() {
        let f = ncx2_cdf(36.0, params(2, 1e4)).unwrap();
        assert!((0.0..1e-100).contains(&f));
        let f = ncx2_cdf(1e4, params(3, 1e4)).unwrap();
        // reference value from an independent implementation
        assert_abs_diff_eq!(f, 0.496_010_577_195_986, epsilon = 1e-10);
        let f = ncx2_cdf(1e6, params(2, 3.0)).unwrap();
        assert_abs_diff_eq!(f, 1.0, epsilon = 1e-13);
    }

    #[test]
    fn large_noncentrality_quantile_converges() {
        let p = params(2, 2e4);
        let x = ncx2_quantile(0.999, p).unwrap();
        assert!((ncx2_cdf(x, p).unwrap() - 0.999).abs() < 1e-9);
    }

    #[test]
    fn pdf_at_origin() {
        assert!(ncx2_pdf(0.0, params(1, 2.0)).unwrap().is_infinite());
        assert_abs_diff_eq!(
            ncx2_pdf(0.0, params(2, 2.0)).unwrap(),
            0.5 * (-1.0f64).exp(),
            epsilon = 1e-15
        );
    }
}
