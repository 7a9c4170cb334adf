//! Simulated pure-feedback plants
//!
//! ```text
//! ẋ_i = f_i(x̄_i) + g_i(x̄_i)·x_{i+1} + w_i,   i < N
//! ẋ_N = f_N(x̄_N) + g_N(x̄_N)·u + w_N,        y = x_1
//! ```
//!
//! These stand in for the unknown system; the controller never calls into
//! this module.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    SingleIntegrator,
    DoubleIntegrator,
    /// Two-stage nonlinear system with state-dependent input gains bounded
    /// below by 1.
    NonlinearDemo,
}

impl PlantKind {
    pub fn required_stages(self) -> usize {
        match self {
            PlantKind::SingleIntegrator => 1,
            PlantKind::DoubleIntegrator | PlantKind::NonlinearDemo => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantSpec {
    pub kind: PlantKind,
    pub dim: usize,
    pub stages: usize,
    /// Sup-norm bound on w_i, one entry per stage.
    pub disturbance_bound: Vec<f64>,
    /// Correlation time of the disturbance process (s).
    pub correlation_time: f64,
    pub initial_state: Vec<DVector<f64>>,
}

impl PlantSpec {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.stages != self.kind.required_stages() {
            out.push(format!(
                "plant {:?} needs {} stages, got {}",
                self.kind,
                self.kind.required_stages(),
                self.stages
            ));
        }
        if self.initial_state.len() != self.stages
            || self.initial_state.iter().any(|x| x.len() != self.dim)
        {
            out.push(format!(
                "initial state must hold {} stages of dimension {}",
                self.stages, self.dim
            ));
        }
        if self.disturbance_bound.len() != self.stages {
            out.push("one disturbance bound per stage is required".to_string());
        }
        if self.disturbance_bound.iter().any(|b| !(*b >= 0.0)) {
            out.push("disturbance bounds must be non-negative".to_string());
        }
        if !(self.correlation_time > 0.0) {
            out.push("disturbance correlation time must be positive".to_string());
        }
        out
    }

    fn check_dims(&self, xbar: &[DVector<f64>], u: &DVector<f64>) -> Result<()> {
        if xbar.len() != self.stages {
            return Err(Error::Dimension {
                expected: self.stages,
                got: xbar.len(),
            });
        }
        for x in xbar.iter().chain(std::iter::once(u)) {
            if x.len() != self.dim {
                return Err(Error::Dimension {
                    expected: self.dim,
                    got: x.len(),
                });
            }
        }
        Ok(())
    }
}

/// g_i(x̄_i): the gain multiplying x_{i+1} (or u for the last stage).
pub fn input_gain(spec: &PlantSpec, stage: usize, xbar: &[DVector<f64>]) -> DMatrix<f64> {
    let n = spec.dim;
    match (spec.kind, stage) {
        (PlantKind::NonlinearDemo, 0) => {
            DMatrix::identity(n, n) * (1.5 + 0.5 * xbar[0].norm().tanh())
        }
        (PlantKind::NonlinearDemo, _) => {
            DMatrix::from_diagonal(&xbar[0].map(|x| 2.0 + x.cos()))
        }
        _ => DMatrix::identity(n, n),
    }
}

fn drift(spec: &PlantSpec, stage: usize, xbar: &[DVector<f64>]) -> DVector<f64> {
    match (spec.kind, stage) {
        (PlantKind::NonlinearDemo, 0) => xbar[0].map(|x| 0.1 * x.sin()),
        (PlantKind::NonlinearDemo, _) => {
            let scale = 1.0 + (xbar[0].norm_squared() + xbar[1].norm_squared()).sqrt();
            xbar[0].component_mul(&xbar[1]) * (0.1 / scale)
        }
        _ => DVector::zeros(spec.dim),
    }
}

/// Stacked time derivative of the plant state.
pub fn plant_derivative(
    spec: &PlantSpec,
    xbar: &[DVector<f64>],
    u: &DVector<f64>,
    w: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    spec.check_dims(xbar, u)?;
    let last = spec.stages - 1;
    Ok((0..spec.stages)
        .map(|i| {
            let next = if i == last { u } else { &xbar[i + 1] };
            let mut dx = drift(spec, i, xbar) + input_gain(spec, i, xbar) * next;
            if let Some(wi) = w.get(i) {
                dx += wi;
            }
            dx
        })
        .collect())
}

/// Bounded, low-pass filtered disturbance.
///
/// Each stage runs a unit-variance Ornstein-Uhlenbeck process z sampled on
/// the integration grid; the disturbance is bound·tanh(z), linearly
/// interpolated inside a step, so ‖w‖∞ < bound always.
#[derive(Debug, Clone)]
pub struct Disturbance {
    bounds: Vec<f64>,
    correlation_time: f64,
    rngs: Vec<ChaCha8Rng>,
    start: Vec<DVector<f64>>,
    end: Vec<DVector<f64>>,
    t_start: f64,
    t_end: f64,
}

impl Disturbance {
    pub fn new(seed: u64, bounds: Vec<f64>, correlation_time: f64, dim: usize) -> Self {
        let mut rngs: Vec<ChaCha8Rng> = (0..bounds.len())
            .map(|stage| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stage as u64 + 1);
                rng
            })
            .collect();
        let start: Vec<DVector<f64>> = rngs.iter_mut().map(|rng| gaussian(rng, dim)).collect();
        Self {
            bounds,
            correlation_time,
            rngs,
            end: start.clone(),
            start,
            t_start: 0.0,
            t_end: 0.0,
        }
    }

    pub fn from_spec(spec: &PlantSpec, seed: u64) -> Self {
        Self::new(seed, spec.disturbance_bound.clone(), spec.correlation_time, spec.dim)
    }

    /// Draw the process value at `t + dt` and make [t, t + dt] the active window.
    pub fn advance(&mut self, t: f64, dt: f64) {
        let a = (-dt / self.correlation_time).exp();
        let b = (1.0 - a * a).sqrt();
        for (stage, rng) in self.rngs.iter_mut().enumerate() {
            let dim = self.end[stage].len();
            let noise = gaussian(rng, dim);
            let next = &self.end[stage] * a + noise * b;
            self.start[stage] = std::mem::replace(&mut self.end[stage], next);
        }
        self.t_start = t;
        self.t_end = t + dt;
    }

    /// w_stage(t) for `t` inside the active window.
    pub fn sample(&self, stage: usize, t: f64) -> DVector<f64> {
        let bound = self.bounds[stage];
        if bound == 0.0 {
            return DVector::zeros(self.start[stage].len());
        }
        let span = self.t_end - self.t_start;
        let frac = if span > 0.0 {
            ((t - self.t_start) / span).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let a = self.start[stage].map(|z| bound * z.tanh());
        let b = self.end[stage].map(|z| bound * z.tanh());
        &a + (b - &a) * frac
    }

    pub fn sample_all(&self, t: f64) -> Vec<DVector<f64>> {
        (0..self.bounds.len()).map(|s| self.sample(s, t)).collect()
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    DVector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(rng)))
}

/// One RK4 step with u held constant; the disturbance generator is advanced
/// over [t, t + dt] and sampled at the stage times.
pub fn plant_step(
    spec: &PlantSpec,
    xbar: &[DVector<f64>],
    u: &DVector<f64>,
    gen: &mut Disturbance,
    t: f64,
    dt: f64,
) -> Result<Vec<DVector<f64>>> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("step size must be positive, got {dt}")));
    }
    gen.advance(t, dt);
    let f = |x: &[DVector<f64>], tau: f64| plant_derivative(spec, x, u, &gen.sample_all(tau));
    let axpy = |x: &[DVector<f64>], k: &[DVector<f64>], h: f64| -> Vec<DVector<f64>> {
        x.iter().zip(k).map(|(a, b)| a + b * h).collect()
    };
    let k1 = f(xbar, t)?;
    let k2 = f(&axpy(xbar, &k1, 0.5 * dt), t + 0.5 * dt)?;
    let k3 = f(&axpy(xbar, &k2, 0.5 * dt), t + 0.5 * dt)?;
    let k4 = f(&axpy(xbar, &k3, dt), t + dt)?;
    let next: Vec<DVector<f64>> = (0..xbar.len())
        .map(|i| &xbar[i] + (&k1[i] + &k2[i] * 2.0 + &k3[i] * 2.0 + &k4[i]) * (dt / 6.0))
        .collect();
    if next.iter().any(|x| x.iter().any(|v| !v.is_finite())) {
        return Err(Error::NumericalBlowup { t: t + dt });
    }
    Ok(next)
}
