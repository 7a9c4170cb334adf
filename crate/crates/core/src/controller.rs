//! Closed-form funnel controller keeping the output inside the tube.
//!
//! Stage 1 turns the tube constraint ‖x1 − c‖ < r into a reference r2 for
//! x2; every later stage k tracks r_k inside the exponentially shrinking
//! funnel |x_k,i − r_k,i| < γ_k,i(t) and produces r_{k+1}. The last
//! reference is the plant input. Nothing here looks at the plant model.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tube::TubeState;

/// Normalized errors are treated as having left the domain beyond 1 − this.
pub const BOUNDARY_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelStageParams {
    pub kappa: f64,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub mu: Vec<f64>,
}

impl FunnelStageParams {
    pub fn validate(&self, dim: usize) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.kappa > 0.0) {
            out.push("stage kappa must be positive".to_string());
        }
        if self.p.len() != dim || self.q.len() != dim || self.mu.len() != dim {
            out.push(format!("funnel parameters must have {dim} components"));
            return out;
        }
        for i in 0..dim {
            if !(self.p[i] > self.q[i] && self.q[i] > 0.0) {
                out.push(format!("funnel component {i}: need p > q > 0"));
            }
            if !(self.mu[i] >= 0.0) {
                out.push(format!("funnel component {i}: decay rate must be non-negative"));
            }
        }
        out
    }
}

/// Optional funnel parameters as they appear in a scenario; missing values
/// are filled by [`ControllerConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageSpec {
    pub kappa: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub kappa1: f64,
    /// Funnel parameters for stages 2..=N.
    pub stages: Vec<FunnelStageParams>,
}

pub const DEFAULT_FUNNEL_Q: f64 = 0.5;
pub const DEFAULT_FUNNEL_MU: f64 = 1.0;

impl ControllerConfig {
    /// Fill omitted funnel parameters from the initial state:
    /// q = 0.5, p = 2·|x_k(0) − r_k(0)| + q + 0.5, μ = 1.
    pub fn resolve(
        kappa1: f64,
        specs: &[StageSpec],
        xbar0: &[DVector<f64>],
        tube0: &TubeState,
    ) -> Result<Self> {
        if specs.len() + 1 != xbar0.len() {
            return Err(Error::Scenario(format!(
                "a {}-stage plant needs {} funnel stages, got {}",
                xbar0.len(),
                xbar0.len().saturating_sub(1),
                specs.len()
            )));
        }
        let dim = tube0.c.len();
        let mut reference = stage1_reference(&xbar0[0], tube0, kappa1)?;
        let mut stages = Vec::with_capacity(specs.len());
        for (idx, spec) in specs.iter().enumerate() {
            let xk = &xbar0[idx + 1];
            let q = spec.q.clone().unwrap_or_else(|| vec![DEFAULT_FUNNEL_Q; dim]);
            let p = spec.p.clone().unwrap_or_else(|| {
                (xk - &reference)
                    .iter()
                    .zip(&q)
                    .map(|(e, q)| 2.0 * e.abs() + q + 0.5)
                    .collect()
            });
            let params = FunnelStageParams {
                kappa: spec.kappa,
                p,
                q,
                mu: spec.mu.clone().unwrap_or_else(|| vec![DEFAULT_FUNNEL_MU; dim]),
            };
            let problems = params.validate(dim);
            if !problems.is_empty() {
                return Err(Error::Scenario(format!("stage {}: {}", idx + 2, problems.join("; "))));
            }
            reference = stage_k_reference(xk, &reference, &params, 0.0, idx + 2)?;
            stages.push(params);
        }
        Ok(Self { kappa1, stages })
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len() + 1
    }
}

/// ρ(e) = ln((1 + e)/(1 − e)).
fn transformed_error(e: f64) -> f64 {
    ((1.0 + e) / (1.0 - e)).ln()
}

/// Stage-1 reference r2 = −κ1·ρ1·(x1 − c), with e1 = ‖x1 − c‖/r.
pub fn stage1_reference(x1: &DVector<f64>, tube: &TubeState, kappa1: f64) -> Result<DVector<f64>> {
    let offset = x1 - &tube.c;
    let e1 = offset.norm() / tube.r;
    if !(e1 < 1.0 - BOUNDARY_MARGIN) {
        return Err(Error::TubeViolation { t: tube.t, e1 });
    }
    Ok(offset * (-kappa1 * transformed_error(e1)))
}

/// γ_k,i(t) = (p − q)·e^{−μt} + q.
pub fn funnel_gamma(params: &FunnelStageParams, i: usize, t: f64) -> f64 {
    (params.p[i] - params.q[i]) * (-params.mu[i] * t).exp() + params.q[i]
}

/// Normalized errors e_k,i = (x_k,i − r_k,i)/γ_k,i(t).
pub fn funnel_errors(xk: &DVector<f64>, rk: &DVector<f64>, params: &FunnelStageParams, t: f64) -> DVector<f64> {
    DVector::from_iterator(
        xk.len(),
        (0..xk.len()).map(|i| (xk[i] - rk[i]) / funnel_gamma(params, i, t)),
    )
}

/// Stage-k reference r_{k+1} = −κ_k·ξ_k·ρ_k with
/// ξ_k = 4·diag(γ)⁻¹·(I − diag(e∘e))⁻¹. `stage` is only used in errors.
pub fn stage_k_reference(
    xk: &DVector<f64>,
    rk: &DVector<f64>,
    params: &FunnelStageParams,
    t: f64,
    stage: usize,
) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(xk.len());
    for i in 0..xk.len() {
        let gamma = funnel_gamma(params, i, t);
        let e = (xk[i] - rk[i]) / gamma;
        if !(e.abs() < 1.0 - BOUNDARY_MARGIN) {
            return Err(Error::FunnelViolation {
                stage,
                component: i,
                e,
                t,
            });
        }
        let xi = 4.0 / (gamma * (1.0 - e * e));
        out[i] = -params.kappa * xi * transformed_error(e);
    }
    Ok(out)
}

/// The cascade's output: the input u plus the intermediate references.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub u: DVector<f64>,
    /// r_2 ..= r_N (empty for a single-stage plant).
    pub references: Vec<DVector<f64>>,
    pub e1: f64,
}

/// Runs the full cascade. `xbar` holds x_1..x_N.
pub fn control_input(
    xbar: &[DVector<f64>],
    tube: &TubeState,
    config: &ControllerConfig,
    t: f64,
) -> Result<ControlOutput> {
    if xbar.len() != config.stage_count() {
        return Err(Error::Dimension {
            expected: config.stage_count(),
            got: xbar.len(),
        });
    }
    let e1 = (&xbar[0] - &tube.c).norm() / tube.r;
    let mut reference = stage1_reference(&xbar[0], tube, config.kappa1)?;
    let mut references = Vec::with_capacity(config.stages.len());
    for (idx, params) in config.stages.iter().enumerate() {
        let next = stage_k_reference(&xbar[idx + 1], &reference, params, t, idx + 2)?;
        references.push(std::mem::replace(&mut reference, next));
    }
    Ok(ControlOutput {
        u: reference,
        references,
        e1,
    })
}

/// Problems with the initial condition: y(0) must lie in Γ(0) and each
/// stage must start with |x_k,i(0) − r_k,i(0)| ≤ p_k,i.
pub fn check_initialization(xbar0: &[DVector<f64>], tube0: &TubeState, config: &ControllerConfig) -> Vec<String> {
    let mut out = Vec::new();
    let mut reference = match stage1_reference(&xbar0[0], tube0, config.kappa1) {
        Ok(r) => r,
        Err(_) => {
            out.push("initial containment: y(0) is not inside the initial tube".to_string());
            return out;
        }
    };
    for (idx, params) in config.stages.iter().enumerate() {
        let xk = &xbar0[idx + 1];
        for i in 0..xk.len() {
            if (xk[i] - reference[i]).abs() > params.p[i] {
                out.push(format!(
                    "funnel initialization: stage {} component {i} starts outside its funnel",
                    idx + 2
                ));
            }
        }
        match stage_k_reference(xk, &reference, params, 0.0, idx + 2) {
            Ok(next) => reference = next,
            Err(e) => {
                out.push(format!("funnel initialization: {e}"));
                break;
            }
        }
    }
    out
}
