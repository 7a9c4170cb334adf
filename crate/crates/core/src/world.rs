//! Moving obstacles with Gaussian-uncertain centers.
//!
//! Obstacle j occupies a ball of radius r_o(t) around a random center
//! O_p ~ N(μ(t), σ(t)²·I). Every probability query reduces to a non-central
//! chi-squared CDF with n degrees of freedom and non-centrality
//! λ = ‖x − μ‖² / σ².

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{ncx2_cdf, ncx2_quantile, Ncx2Params};

/// Scalar piecewise-linear profile over time, clamped outside its breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    points: Vec<(f64, f64)>,
}

impl Profile {
    pub fn constant(value: f64) -> Self {
        Self {
            points: vec![(0.0, value)],
        }
    }

    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Scenario("profile needs at least one point".into()));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Scenario("profile times must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Value and slope at `t`. The slope is that of the segment ending at or
    /// after `t` (left slope at breakpoints) and zero outside the profile span.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let pts = &self.points;
        let (t0, v0) = pts[0];
        if t <= t0 {
            return (v0, 0.0);
        }
        let (tn, vn) = pts[pts.len() - 1];
        if t >= tn {
            return (vn, 0.0);
        }
        let i = pts.partition_point(|p| p.0 < t);
        let (ta, va) = pts[i - 1];
        let (tb, vb) = pts[i];
        let slope = (vb - va) / (tb - ta);
        (va + slope * (t - ta), slope)
    }

    /// Smallest value attained (profiles are piecewise linear, so a breakpoint).
    pub fn min_value(&self) -> f64 {
        self.points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min)
    }
}

/// Piecewise-constant-velocity path through timed waypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointPath {
    times: Vec<f64>,
    points: Vec<DVector<f64>>,
}

impl WaypointPath {
    pub fn new(waypoints: Vec<(f64, DVector<f64>)>) -> Result<Self> {
        if waypoints.is_empty() {
            return Err(Error::Scenario("obstacle path needs at least one waypoint".into()));
        }
        let dim = waypoints[0].1.len();
        if let Some(bad) = waypoints.iter().find(|w| w.1.len() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                got: bad.1.len(),
            });
        }
        if waypoints.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Scenario("waypoint times must be strictly increasing".into()));
        }
        let (times, points) = waypoints.into_iter().unzip();
        Ok(Self { times, points })
    }

    pub fn stationary(point: DVector<f64>) -> Self {
        Self {
            times: vec![0.0],
            points: vec![point],
        }
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn waypoints(&self) -> impl Iterator<Item = (f64, &DVector<f64>)> {
        self.times.iter().copied().zip(self.points.iter())
    }

    /// Position and velocity at `t`, with the same clamping convention as [`Profile::eval`].
    pub fn eval(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        let dim = self.dim();
        let last = self.times.len() - 1;
        if t <= self.times[0] {
            return (self.points[0].clone(), DVector::zeros(dim));
        }
        if t >= self.times[last] {
            return (self.points[last].clone(), DVector::zeros(dim));
        }
        let i = self.times.partition_point(|&ti| ti < t);
        let (ta, tb) = (self.times[i - 1], self.times[i]);
        let velocity = (&self.points[i] - &self.points[i - 1]) / (tb - ta);
        let position = &self.points[i - 1] + &velocity * (t - ta);
        (position, velocity)
    }
}

/// One uncertain obstacle together with its avoidance requirements and gains.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertainObstacle {
    pub mean_motion: WaypointPath,
    pub sigma: Profile,
    pub radius: Profile,
    /// Minimum probability with which the tube must avoid this obstacle.
    pub epsilon: f64,
    /// Avoidance activation threshold on q, strictly above `epsilon`.
    pub p_d: f64,
    pub k2: f64,
    pub k3: f64,
}

impl UncertainObstacle {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.sigma.min_value() <= 0.0 {
            out.push("sigma must stay positive".to_string());
        }
        if self.radius.min_value() <= 0.0 {
            out.push("obstacle radius must stay positive".to_string());
        }
        if !(self.epsilon > 0.0 && self.epsilon < self.p_d && self.p_d <= 1.0) {
            out.push(format!(
                "probability ordering 0 < epsilon < p_d <= 1 violated (epsilon = {}, p_d = {})",
                self.epsilon, self.p_d
            ));
        }
        if !(self.k2 > 0.0 && self.k3 > 0.0) {
            out.push("avoidance gains k2, k3 must be positive".to_string());
        }
        out
    }

    pub fn snapshot(&self, t: f64) -> ObstacleSnapshot {
        let (mu, mu_dot) = self.mean_motion.eval(t);
        let (sigma, sigma_dot) = self.sigma.eval(t);
        let (r_o, _) = self.radius.eval(t);
        ObstacleSnapshot {
            mu,
            sigma,
            r_o,
            mu_dot,
            sigma_dot,
        }
    }
}

/// Separation, in obstacle standard deviations, beyond which an avoidance
/// probability is exactly 1 in double precision.
pub const FAR_FIELD_SIGMAS: f64 = 9.0;

/// An obstacle's distribution parameters frozen at one time instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleSnapshot {
    pub mu: DVector<f64>,
    pub sigma: f64,
    pub r_o: f64,
    pub mu_dot: DVector<f64>,
    pub sigma_dot: f64,
}

impl ObstacleSnapshot {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// λ = ‖x − μ‖² / σ².
    pub fn noncentrality(&self, x: &DVector<f64>) -> f64 {
        (x - &self.mu).norm_squared() / (self.sigma * self.sigma)
    }

    fn params_at(&self, x: &DVector<f64>) -> Result<Ncx2Params> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ncx2Params::new(self.dim() as u32, self.noncentrality(x))
    }

    /// Probability that a ball of radius `radius` around `x` is missed by the
    /// obstacle center: 1 − F((radius/σ)²; n, λ(x)).
    ///
    /// When the ball lies more than [`FAR_FIELD_SIGMAS`] standard deviations
    /// from the mean, F ≤ Φ(−9) < 2⁻⁵⁴ and the result is exactly 1.0 in
    /// double precision, so the series is skipped.
    pub fn avoid_probability(&self, x: &DVector<f64>, radius: f64) -> Result<f64> {
        let params = self.params_at(x)?;
        let rho = radius / self.sigma;
        if params.noncentrality().sqrt() - rho >= FAR_FIELD_SIGMAS {
            return Ok(1.0);
        }
        Ok(1.0 - ncx2_cdf(rho * rho, params)?)
    }

    /// q(x): avoidance probability with the buffered safety radius r_o + r_min.
    pub fn q_center(&self, x: &DVector<f64>, r_min: f64) -> Result<f64> {
        self.avoid_probability(x, self.r_o + r_min)
    }

    /// q̂(x): avoidance probability of the bare obstacle radius.
    pub fn q_hat_point(&self, x: &DVector<f64>) -> Result<f64> {
        self.avoid_probability(x, self.r_o)
    }

    /// d̂(x) = σ·sqrt(F⁻¹(1 − ε; n, λ(x))) − r_o: the largest radius a ball at
    /// `x` may have while still avoiding the obstacle with probability ε.
    /// Negative when `x` itself sits in the high-collision region.
    pub fn d_hat(&self, x: &DVector<f64>, epsilon: f64) -> Result<f64> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Domain(format!("epsilon must lie in (0, 1), got {epsilon}")));
        }
        let params = self.params_at(x)?;
        let quantile = ncx2_quantile(1.0 - epsilon, params)?;
        Ok(self.sigma * quantile.sqrt() - self.r_o)
    }
}

/// The set of uncertain obstacles sharing one output space.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    dim: usize,
    obstacles: Vec<UncertainObstacle>,
}

impl World {
    pub fn new(dim: usize, obstacles: Vec<UncertainObstacle>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Scenario("world dimension must be positive".into()));
        }
        for ob in &obstacles {
            if ob.mean_motion.dim() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: ob.mean_motion.dim(),
                });
            }
        }
        Ok(Self { dim, obstacles })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            obstacles: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn obstacles(&self) -> &[UncertainObstacle] {
        &self.obstacles
    }

    pub fn len(&self) -> usize {
        self.obstacles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obstacles.is_empty()
    }

    pub fn snapshots(&self, t: f64) -> Vec<ObstacleSnapshot> {
        self.obstacles.iter().map(|o| o.snapshot(t)).collect()
    }
}
