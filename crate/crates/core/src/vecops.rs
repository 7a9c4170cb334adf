//! Small vector helpers shared by the tube and controller.

use nalgebra::DVector;

/// Element-wise signed cube root, sign(x)·|x|^(1/3).
pub fn signed_cbrt(v: &DVector<f64>) -> DVector<f64> {
    v.map(f64::cbrt)
}

/// Numerically stable −(1/ν)·ln Σ exp(−ν·xᵢ). Returns +∞ for an empty input.
pub fn soft_min(values: impl IntoIterator<Item = f64>, nu: f64) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return min;
    }
    let sum: f64 = values.iter().map(|&x| (-nu * (x - min)).exp()).sum();
    min - sum.ln() / nu
}

pub fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}
