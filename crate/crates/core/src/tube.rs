//! Online spatiotemporal tube synthesis.
//!
//! The tube is the ball Γ(t) = B(c(t), r(t)). Its center follows
//!
//! ```text
//! ċ = k1·cbrt(η − c) + Σ_j (k2_j·m_j + k3_j·v_j)·θ_j
//! ```
//!
//! where cbrt is the element-wise signed cube root, m_j = (c − μ_j)/(q_j − ε_j)
//! is a barrier-scaled repulsion from obstacle j, v_j is a unit vector
//! orthogonal to m_j and θ_j = 1/q_j − 1/p_d_j switches avoidance on once
//! q_j drops to p_d_j. The radius is not integrated: it is evaluated from the
//! closed form r = softmin_ν(r_max, d) with d = softmin_ν over the per-obstacle
//! clearances d̂_j.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecops::{signed_cbrt, soft_min};
use crate::world::{ObstacleSnapshot, World};

/// Floor on q − ε inside the repulsion vector.
pub const DENOMINATOR_FLOOR: f64 = 1e-9;
/// Maximum number of step halvings in [`TubeSynthesizer::step`].
pub const MAX_HALVINGS: u32 = 8;
const FALLBACK_THRESHOLD: f64 = 1e-9;

/// Initial and target balls Ŝ = B(s, d_S), T̂ = B(η, d_T).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetSpec {
    pub s: DVector<f64>,
    pub d_s: f64,
    pub eta: DVector<f64>,
    pub d_t: f64,
}

impl SetSpec {
    /// Γ ⊂ T̂, i.e. ‖c − η‖ + r ≤ d_T.
    pub fn tube_in_target(&self, c: &DVector<f64>, r: f64) -> bool {
        (c - &self.eta).norm() + r <= self.d_t
    }

    /// Γ ⊂ Ŝ.
    pub fn tube_in_start(&self, c: &DVector<f64>, r: f64) -> bool {
        (c - &self.s).norm() + r <= self.d_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeGains {
    pub k1: f64,
    pub nu: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl TubeGains {
    pub fn validate(&self, sets: &SetSpec) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.k1 > 0.0) {
            out.push("k1 must be positive".to_string());
        }
        if !(self.nu > 0.0) {
            out.push("nu must be positive".to_string());
        }
        if !(self.r_min > 0.0 && self.r_min < self.r_max) {
            out.push(format!(
                "radius ordering: need 0 < r_min < r_max (r_min = {}, r_max = {})",
                self.r_min, self.r_max
            ));
        }
        if self.r_max > sets.d_s.min(sets.d_t) {
            out.push(format!(
                "r_max = {} exceeds min(d_S, d_T) = {}",
                self.r_max,
                sets.d_s.min(sets.d_t)
            ));
        }
        out
    }

    /// Lower bound on the radius implied by d > r_min.
    pub fn radius_floor(&self) -> f64 {
        soft_min([self.r_max, self.r_min], self.nu)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TubeState {
    pub t: f64,
    pub c: DVector<f64>,
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvoidanceDiagnostics {
    pub q: f64,
    pub theta: f64,
    pub d_hat: f64,
    pub m_norm: f64,
}

/// Switching function: 1/q − 1/p_d while q ≤ p_d, zero otherwise.
pub fn theta(q: f64, p_d: f64) -> Result<f64> {
    if !(q > 0.0) {
        return Err(Error::Domain(format!("switching function needs q > 0, got {q}")));
    }
    Ok(if q <= p_d { 1.0 / q - 1.0 / p_d } else { 0.0 })
}

/// m = (c − μ)/(q − ε) with the denominator floored at [`DENOMINATOR_FLOOR`].
pub fn repulsion_vector(
    c: &DVector<f64>,
    snap: &ObstacleSnapshot,
    q: f64,
    epsilon: f64,
) -> Result<DVector<f64>> {
    if q <= epsilon {
        return Err(Error::BarrierBreach {
            obstacle: 0,
            q,
            epsilon,
        });
    }
    let denom = (q - epsilon).max(DENOMINATOR_FLOOR);
    Ok((c - &snap.mu) / denom)
}

/// Unit vector orthogonal to `m`, steering towards `goal_dir`.
///
/// Uses the normalized projection of `goal_dir` onto the orthogonal
/// complement of `m`. When that projection vanishes a fixed orthogonal
/// direction is used instead, flipped if needed to agree with `prev`.
pub fn tangential_vector(
    m: &DVector<f64>,
    goal_dir: &DVector<f64>,
    prev: Option<&DVector<f64>>,
) -> DVector<f64> {
    let m_sq = m.norm_squared();
    if m_sq == 0.0 {
        let g = goal_dir.norm();
        return if g > 0.0 {
            goal_dir / g
        } else {
            DVector::zeros(goal_dir.len())
        };
    }
    let projected = goal_dir - m * (m.dot(goal_dir) / m_sq);
    let norm = projected.norm();
    if norm >= FALLBACK_THRESHOLD {
        return orthogonalize(projected / norm, m, m_sq);
    }
    let mut fallback = orthogonal_fallback(m);
    if let Some(p) = prev {
        if fallback.dot(p) < 0.0 {
            fallback = -fallback;
        }
    }
    fallback
}

// One extra Gram-Schmidt pass to push ⟨m, v⟩ down to rounding level.
fn orthogonalize(v: DVector<f64>, m: &DVector<f64>, m_sq: f64) -> DVector<f64> {
    let v = &v - m * (m.dot(&v) / m_sq);
    let n = v.norm();
    v / n
}

fn orthogonal_fallback(m: &DVector<f64>) -> DVector<f64> {
    let dim = m.len();
    if dim == 1 {
        // no orthogonal direction exists on the line
        return DVector::zeros(1);
    }
    let m_sq = m.norm_squared();
    if dim <= 3 {
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| m[b].abs().total_cmp(&m[a].abs()).then(a.cmp(&b)));
        let (i, j) = (order[0], order[1]);
        let mut f = DVector::zeros(dim);
        f[i] = -m[j];
        f[j] = m[i];
        return orthogonalize(f, m, m_sq);
    }
    let k = (0..dim)
        .min_by(|&a, &b| m[a].abs().total_cmp(&m[b].abs()).then(a.cmp(&b)))
        .unwrap_or(0);
    let mut e = DVector::zeros(dim);
    e[k] = 1.0;
    orthogonalize(e, m, m_sq)
}

/// Center velocity and the per-obstacle quantities it was built from.
#[derive(Debug, Clone)]
pub struct CenterEval {
    pub derivative: DVector<f64>,
    pub q: Vec<f64>,
    pub theta: Vec<f64>,
    pub m_norm: Vec<f64>,
    pub v: Vec<Option<DVector<f64>>>,
}

/// Right-hand side of the center dynamics at (c, t).
pub fn center_derivative(
    c: &DVector<f64>,
    snaps: &[ObstacleSnapshot],
    world: &World,
    sets: &SetSpec,
    gains: &TubeGains,
    prev_v: &[Option<DVector<f64>>],
) -> Result<CenterEval> {
    let goal_dir = &sets.eta - c;
    let mut derivative = signed_cbrt(&goal_dir) * gains.k1;
    let n_o = world.len();
    let mut q_all = Vec::with_capacity(n_o);
    let mut theta_all = Vec::with_capacity(n_o);
    let mut m_norm = Vec::with_capacity(n_o);
    let mut v_all = Vec::with_capacity(n_o);
    for (j, (ob, snap)) in world.obstacles().iter().zip(snaps).enumerate() {
        let q = snap.q_center(c, gains.r_min)?;
        let m = repulsion_vector(c, snap, q, ob.epsilon).map_err(|e| match e {
            Error::BarrierBreach { q, epsilon, .. } => Error::BarrierBreach {
                obstacle: j,
                q,
                epsilon,
            },
            other => other,
        })?;
        let th = theta(q, ob.p_d)?;
        let v = if th > 0.0 {
            let v = tangential_vector(&m, &goal_dir, prev_v.get(j).and_then(Option::as_ref));
            derivative += (&m * ob.k2 + &v * ob.k3) * th;
            Some(v)
        } else {
            None
        };
        q_all.push(q);
        theta_all.push(th);
        m_norm.push(m.norm());
        v_all.push(v);
    }
    Ok(CenterEval {
        derivative,
        q: q_all,
        theta: theta_all,
        m_norm,
        v: v_all,
    })
}

/// Per-obstacle clearances d̂_j at `c`.
pub fn clearances(c: &DVector<f64>, snaps: &[ObstacleSnapshot], world: &World) -> Result<Vec<f64>> {
    world
        .obstacles()
        .iter()
        .zip(snaps)
        .map(|(ob, snap)| snap.d_hat(c, ob.epsilon))
        .collect()
}

/// d(t) = −(1/ν)·ln Σ_j exp(−ν·d̂_j); +∞ with no obstacles.
pub fn soft_min_distance(d_hats: &[f64], gains: &TubeGains) -> f64 {
    soft_min(d_hats.iter().copied(), gains.nu)
}

/// Closed-form radius r = −(1/ν)·ln(e^{−ν r_max} + e^{−ν d}).
pub fn radius_from_distance(d: f64, gains: &TubeGains) -> Result<f64> {
    let r = soft_min([gains.r_max, d], gains.nu);
    if !(r > 0.0) {
        return Err(Error::RadiusCollapse { radius: r });
    }
    Ok(r)
}

/// Tube radius for a center `c` at the instant the snapshots describe.
pub fn radius(
    c: &DVector<f64>,
    snaps: &[ObstacleSnapshot],
    world: &World,
    gains: &TubeGains,
) -> Result<f64> {
    let d_hats = clearances(c, snaps, world)?;
    radius_from_distance(soft_min_distance(&d_hats, gains), gains)
}

/// Closed-form center trajectory with no active obstacles, starting from
/// `c1` at `t1`. Components that have arrived stay at η.
pub fn analytic_center_obstacle_free(
    c1: &DVector<f64>,
    t1: f64,
    eta: &DVector<f64>,
    k1: f64,
    t: f64,
) -> DVector<f64> {
    let elapsed = t - t1;
    if !(elapsed > 0.0) {
        return c1.clone();
    }
    DVector::from_iterator(
        eta.len(),
        eta.iter().zip(c1.iter()).map(|(&e, &c)| {
            let gap = e - c;
            let remaining = (gap.abs().powf(2.0 / 3.0) - 2.0 / 3.0 * k1 * elapsed).max(0.0);
            e - gap.signum() * remaining.powf(1.5)
        }),
    )
}

/// t_c = t1 + max_i 3·|η_i − c_i(t1)|^{2/3} / (2·k1).
pub fn convergence_time(c_t1: &DVector<f64>, eta: &DVector<f64>, k1: f64, t1: f64) -> f64 {
    let worst = eta
        .iter()
        .zip(c_t1.iter())
        .map(|(&e, &c)| (e - c).abs().powf(2.0 / 3.0))
        .fold(0.0, f64::max);
    t1 + 3.0 * worst / (2.0 * k1)
}

/// Everything recorded about the tube after an accepted step.
#[derive(Debug, Clone)]
pub struct TubeSample {
    pub state: TubeState,
    pub diagnostics: Vec<AvoidanceDiagnostics>,
    /// Soft-min clearance d(t).
    pub distance: f64,
    /// Number of sub-steps the last step was split into.
    pub substeps: u32,
}

/// Stateful integrator for one tube. Keeps the current state and the last
/// tangential directions (for sign persistence of the fallback).
#[derive(Debug, Clone)]
pub struct TubeSynthesizer {
    world: World,
    sets: SetSpec,
    gains: TubeGains,
    current: TubeSample,
    eval: CenterEval,
    prev_v: Vec<Option<DVector<f64>>>,
}

impl TubeSynthesizer {
    /// Start the tube at c(0) = s.
    pub fn new(world: World, sets: SetSpec, gains: TubeGains) -> Result<Self> {
        let prev_v = vec![None; world.len()];
        let c = sets.s.clone();
        let snaps = world.snapshots(0.0);
        let eval = center_derivative(&c, &snaps, &world, &sets, &gains, &prev_v)?;
        let current = sample_at(0.0, c, &snaps, &world, &gains, &eval, 1)?;
        let prev_v = eval.v.clone();
        Ok(Self {
            world,
            sets,
            gains,
            current,
            eval,
            prev_v,
        })
    }

    pub fn current(&self) -> &TubeSample {
        &self.current
    }

    pub fn state(&self) -> &TubeState {
        &self.current.state
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn sets(&self) -> &SetSpec {
        &self.sets
    }

    pub fn gains(&self) -> &TubeGains {
        &self.gains
    }

    /// Advance the center by `dt` with RK4, halving the step (up to
    /// [`MAX_HALVINGS`] times) while some q_j approaches ε_j too fast to
    /// resolve, then recompute the radius at the new time.
    pub fn step(&mut self, dt: f64) -> Result<&TubeSample> {
        let t_next = self.current.state.t + dt;
        self.step_to(t_next)
    }

    /// Same as [`step`](Self::step) but lands exactly on `t_next`.
    pub fn step_to(&mut self, t_next: f64) -> Result<&TubeSample> {
        let t0 = self.current.state.t;
        let dt = t_next - t0;
        if !(dt > 0.0) {
            return Err(Error::Domain(format!("step size must be positive, got {dt}")));
        }
        let mut last_err = None;
        for level in 0..=MAX_HALVINGS {
            let pieces = 1u32 << level;
            match self.try_substeps(t_next, pieces, level == MAX_HALVINGS) {
                Ok((c, eval)) => {
                    let t = t_next;
                    let snaps = self.world.snapshots(t);
                    let sample = sample_at(t, c, &snaps, &self.world, &self.gains, &eval, pieces)?;
                    for (slot, v) in self.prev_v.iter_mut().zip(&eval.v) {
                        if v.is_some() {
                            slot.clone_from(v);
                        }
                    }
                    self.eval = eval;
                    self.current = sample;
                    return Ok(&self.current);
                }
                Err(err @ Error::BarrierBreach { .. }) => last_err = Some(err),
                Err(other) => return Err(other),
            }
        }
        debug_assert!(matches!(last_err, Some(Error::BarrierBreach { .. })));
        Err(Error::StepCollapse {
            t: t0,
            halvings: MAX_HALVINGS,
        })
    }

    fn try_substeps(&self, t_next: f64, pieces: u32, finest: bool) -> Result<(DVector<f64>, CenterEval)> {
        let t0 = self.current.state.t;
        let h = (t_next - t0) / pieces as f64;
        let mut c = self.current.state.c.clone();
        let mut eval = self.eval.clone();
        for i in 0..pieces {
            let t = t0 + h * i as f64;
            let t_end = if i + 1 == pieces { t_next } else { t + h };
            let next = self.rk4(&c, t, t_end - t, &eval)?;
            let snaps = self.world.snapshots(t_end);
            let next_eval =
                center_derivative(&next, &snaps, &self.world, &self.sets, &self.gains, &self.prev_v)?;
            if !finest {
                for (j, ob) in self.world.obstacles().iter().enumerate() {
                    let drop = eval.q[j] - next_eval.q[j];
                    if drop > 0.0 && next_eval.q[j] - ob.epsilon < 10.0 * drop {
                        return Err(Error::BarrierBreach {
                            obstacle: j,
                            q: next_eval.q[j],
                            epsilon: ob.epsilon,
                        });
                    }
                }
            }
            c = next;
            eval = next_eval;
        }
        Ok((c, eval))
    }

    fn rk4(&self, c: &DVector<f64>, t: f64, h: f64, first: &CenterEval) -> Result<DVector<f64>> {
        let f = |x: &DVector<f64>, tau: f64| -> Result<DVector<f64>> {
            let snaps = self.world.snapshots(tau);
            Ok(center_derivative(x, &snaps, &self.world, &self.sets, &self.gains, &self.prev_v)?.derivative)
        };
        let k1 = &first.derivative;
        let k2 = f(&(c + k1 * (0.5 * h)), t + 0.5 * h)?;
        let k3 = f(&(c + &k2 * (0.5 * h)), t + 0.5 * h)?;
        let k4 = f(&(c + &k3 * h), t + h)?;
        Ok(c + (k1 + &k2 * 2.0 + &k3 * 2.0 + &k4) * (h / 6.0))
    }
}

fn sample_at(
    t: f64,
    c: DVector<f64>,
    snaps: &[ObstacleSnapshot],
    world: &World,
    gains: &TubeGains,
    eval: &CenterEval,
    substeps: u32,
) -> Result<TubeSample> {
    let d_hats = clearances(&c, snaps, world)?;
    let distance = soft_min_distance(&d_hats, gains);
    let r = radius_from_distance(distance, gains)?;
    let diagnostics = d_hats
        .iter()
        .enumerate()
        .map(|(j, &d_hat)| AvoidanceDiagnostics {
            q: eval.q[j],
            theta: eval.theta[j],
            d_hat,
            m_norm: eval.m_norm[j],
        })
        .collect();
    Ok(TubeSample {
        state: TubeState { t, c, r },
        diagnostics,
        distance,
        substeps,
    })
}
