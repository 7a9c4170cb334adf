//! Post-hoc certification of trajectory logs.
//!
//! [`audit`] re-derives every invariant from the logged states and the
//! scenario, without trusting the logged diagnostics. [`mc_avoidance`]
//! estimates the avoidance probability of the logged tube by sampling
//! obstacle positions.

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{funnel_errors, stage1_reference, stage_k_reference, ControllerConfig};
use crate::error::{Error, Result};
use crate::log::{StepRecord, TrajectoryLog};
use crate::scenario::Scenario;
use crate::tube::TubeState;
use crate::world::World;

/// Allowed gap between logged and recomputed q values.
pub const Q_CONSISTENCY_TOL: f64 = 1e-9;
/// Slack on comparisons whose two sides come from different numerical paths
/// (quantile inversion against the CDF).
pub const CROSS_PATH_TOL: f64 = 1e-9;
pub const MIN_MC_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub statistic: f64,
    pub threshold: f64,
    /// Distance from the threshold, positive when passing.
    pub margin: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_failure: Option<usize>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McObstacle {
    pub obstacle: usize,
    pub epsilon: f64,
    /// Lowest empirical avoid frequency over the checked instants.
    pub min_frequency: f64,
    /// Time at which `min_frequency` was observed.
    pub worst_t: f64,
    /// ε − 3·sqrt(ε(1−ε)/samples).
    pub threshold: f64,
    pub margin: f64,
    /// Largest |empirical − analytic| in standard errors of the analytic
    /// value, over instants with samples·p(1−p) ≥ 10.
    pub max_z: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub samples: usize,
    pub seed: u64,
    pub times_checked: Vec<f64>,
    pub obstacles: Vec<McObstacle>,
}

impl McReport {
    pub fn passed(&self) -> bool {
        self.obstacles.iter().all(|o| o.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub scenario: String,
    pub steps_checked: usize,
    pub checks: Vec<CheckResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<McReport>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed) && self.monte_carlo.as_ref().is_none_or(McReport::passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text table, one line per check.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{verdict}  {} ({} steps)", self.scenario, self.steps_checked);
        for c in &self.checks {
            let mark = if c.passed { "ok  " } else { "FAIL" };
            let _ = write!(
                out,
                "  {mark} {:<24} stat={:<12.6e} thr={:<12.6e} margin={:.3e}",
                c.name, c.statistic, c.threshold, c.margin
            );
            if let Some(step) = c.first_failure {
                let _ = write!(out, " first_failure=step {step}");
            }
            if !c.detail.is_empty() {
                let _ = write!(out, "  ({})", c.detail);
            }
            out.push('\n');
        }
        if let Some(mc) = &self.monte_carlo {
            let _ = writeln!(
                out,
                "  monte carlo: {} samples at {} instants, seed {}",
                mc.samples,
                mc.times_checked.len(),
                mc.seed
            );
            for o in &mc.obstacles {
                let mark = if o.passed { "ok  " } else { "FAIL" };
                let _ = writeln!(
                    out,
                    "  {mark} obstacle {:<3} eps={:.4} min_freq={:.5} at t={:.3} thr={:.5} max_z={:.2}",
                    o.obstacle, o.epsilon, o.min_frequency, o.worst_t, o.threshold, o.max_z
                );
            }
        }
        out
    }
}

/// Accumulates the worst case of a per-step quantity. `lower_is_bad`
/// selects whether the statistic is a minimum or a maximum.
struct Tracker {
    name: &'static str,
    threshold: f64,
    lower_is_bad: bool,
    worst: f64,
    first_failure: Option<usize>,
    detail: String,
}

impl Tracker {
    fn max(name: &'static str, threshold: f64) -> Self {
        Self {
            name,
            threshold,
            lower_is_bad: false,
            worst: f64::NEG_INFINITY,
            first_failure: None,
            detail: String::new(),
        }
    }

    fn min(name: &'static str, threshold: f64) -> Self {
        Self {
            lower_is_bad: true,
            worst: f64::INFINITY,
            ..Self::max(name, threshold)
        }
    }

    fn observe(&mut self, step: usize, value: f64, ok: bool) {
        let worse = if self.lower_is_bad {
            !(value >= self.worst)
        } else {
            !(value <= self.worst)
        };
        if worse {
            self.worst = value;
        }
        if !ok && self.first_failure.is_none() {
            self.first_failure = Some(step);
        }
    }

    fn finish(self) -> CheckResult {
        let margin = if self.lower_is_bad {
            self.worst - self.threshold
        } else {
            self.threshold - self.worst
        };
        CheckResult {
            name: self.name.to_string(),
            passed: self.first_failure.is_none(),
            statistic: self.worst,
            threshold: self.threshold,
            margin: if margin.is_nan() { f64::NEG_INFINITY } else { margin },
            first_failure: self.first_failure,
            detail: self.detail,
        }
    }
}

fn vector(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

/// Per-step quantities recomputed from scratch.
#[derive(Default)]
struct StepAudit {
    containment: f64,
    /// min_j (q_j − ε_j) with the buffered radius r_o + r_min.
    q_center_margin: f64,
    /// min_j (P(‖c − O‖ ≥ r_o + r) − ε_j).
    q_tube_margin: f64,
    q_logged_gap: f64,
    /// max_j |P(‖c − O‖ ≥ r_o + d̂_j) − ε_j| for the logged d̂_j.
    d_hat_gap: f64,
    /// r − min_j d̂_j (logged).
    clearance_excess: f64,
    /// max |e_k,i| over stages 2..=N.
    funnel: f64,
    error: Option<String>,
}

fn audit_step(step: &StepRecord, scenario: &Scenario, config: &ControllerConfig) -> StepAudit {
    let mut out = StepAudit {
        q_center_margin: f64::INFINITY,
        q_tube_margin: f64::INFINITY,
        clearance_excess: f64::NEG_INFINITY,
        ..Default::default()
    };
    let c = vector(&step.c);
    let y = vector(&step.y);
    out.containment = if step.r > 0.0 { (&y - &c).norm() / step.r } else { f64::INFINITY };

    let snaps = scenario.world.snapshots(step.t);
    for (j, (ob, snap)) in scenario.world.obstacles().iter().zip(&snaps).enumerate() {
        let d_hat = step.d_hat.get(j).copied().unwrap_or(f64::NAN);
        let recomputed = (|| -> Result<(f64, f64, f64)> {
            Ok((
                snap.q_center(&c, scenario.tube_gains.r_min)?,
                snap.avoid_probability(&c, snap.r_o + step.r)?,
                // the logged d̂ must sit exactly on the ε level set
                (snap.avoid_probability(&c, snap.r_o + d_hat)? - ob.epsilon).abs(),
            ))
        })();
        match recomputed {
            Ok((q, q_tube, d_hat_gap)) => {
                out.q_center_margin = out.q_center_margin.min(q - ob.epsilon);
                out.q_tube_margin = out.q_tube_margin.min(q_tube - ob.epsilon);
                out.clearance_excess = out.clearance_excess.max(step.r - d_hat);
                out.d_hat_gap = out.d_hat_gap.max(d_hat_gap);
                let gap = step.q.get(j).map_or(f64::INFINITY, |logged| (logged - q).abs());
                out.q_logged_gap = out.q_logged_gap.max(gap);
            }
            Err(e) => {
                out.q_center_margin = f64::NEG_INFINITY;
                out.error.get_or_insert(format!("obstacle {j}: {e}"));
            }
        }
    }

    if step.xbar.len() == config.stage_count() && step.r > 0.0 {
        let xbar: Vec<DVector<f64>> = step.xbar.iter().map(|x| vector(x)).collect();
        let tube = TubeState { t: step.t, c, r: step.r };
        let mut reference = stage1_reference(&xbar[0], &tube, config.kappa1);
        for (idx, params) in config.stages.iter().enumerate() {
            let rk = match reference {
                Ok(rk) => rk,
                Err(_) => {
                    out.funnel = f64::INFINITY;
                    break;
                }
            };
            let e = funnel_errors(&xbar[idx + 1], &rk, params, step.t);
            out.funnel = out.funnel.max(e.amax());
            reference = stage_k_reference(&xbar[idx + 1], &rk, params, step.t, idx + 2);
        }
    } else if step.xbar.len() != config.stage_count() {
        out.funnel = f64::INFINITY;
        out.error.get_or_insert(format!(
            "step holds {} stages, controller has {}",
            step.xbar.len(),
            config.stage_count()
        ));
    }
    out
}

/// Deterministic re-check of a (complete or partial) log against its scenario.
pub fn audit(log: &TrajectoryLog, scenario: &Scenario) -> VerificationReport {
    let steps = &log.steps;
    let gains = &scenario.tube_gains;
    let sets = &scenario.sets;
    let config = &log.header.controller;

    let time_tol = 1e-9 * (1.0 + log.header.horizon);
    let mut form = Tracker::max("log_well_formed", time_tol);
    if log.header.dim != scenario.dim() || log.header.obstacles != scenario.world.len() {
        form.observe(0, f64::INFINITY, false);
        form.detail = format!(
            "log has dim {} with {} obstacles, scenario has dim {} with {}",
            log.header.dim,
            log.header.obstacles,
            scenario.dim(),
            scenario.world.len()
        );
    }
    for (i, s) in steps.iter().enumerate() {
        let expected = i as f64 * log.header.dt;
        let drift = (s.t - expected).abs();
        let ok = s.is_finite() && drift <= time_tol && s.c.len() == scenario.dim();
        form.observe(i, if s.is_finite() { drift } else { f64::INFINITY }, ok);
    }
    if steps.is_empty() {
        form.observe(0, f64::INFINITY, false);
        form.detail = "log has no steps".into();
    }

    let per_step: Vec<StepAudit> = steps.par_iter().map(|s| audit_step(s, scenario, config)).collect();

    let mut containment = Tracker::max("containment", 1.0);
    let mut radius_low = Tracker::min("radius_positive", 0.0);
    let mut radius_high = Tracker::max("radius_below_r_max", gains.r_max);
    let mut q_center = Tracker::min("avoidance_center", 0.0);
    let mut q_tube = Tracker::min("avoidance_tube", -CROSS_PATH_TOL);
    let mut q_logged = Tracker::max("logged_q_consistent", Q_CONSISTENCY_TOL);
    let mut clearance = Tracker::max("radius_below_clearance", CROSS_PATH_TOL);
    let mut d_hat_level = Tracker::max("logged_d_hat_on_level_set", CROSS_PATH_TOL);
    let mut funnel = Tracker::max("funnel_bounds", 1.0);
    for (i, (s, a)) in steps.iter().zip(&per_step).enumerate() {
        containment.observe(i, a.containment, a.containment < 1.0);
        radius_low.observe(i, s.r, s.r > 0.0);
        radius_high.observe(i, s.r, s.r <= gains.r_max);
        q_center.observe(i, a.q_center_margin, a.q_center_margin > 0.0);
        if let Some(e) = &a.error {
            if q_center.detail.is_empty() {
                q_center.detail = format!("step {i}: {e}");
            }
        }
        if !scenario.world.is_empty() {
            q_tube.observe(i, a.q_tube_margin, a.q_tube_margin >= -CROSS_PATH_TOL);
            q_logged.observe(i, a.q_logged_gap, a.q_logged_gap <= Q_CONSISTENCY_TOL);
            clearance.observe(i, a.clearance_excess, a.clearance_excess <= CROSS_PATH_TOL);
            d_hat_level.observe(i, a.d_hat_gap, a.d_hat_gap <= CROSS_PATH_TOL);
        }
        funnel.observe(i, a.funnel, a.funnel < 1.0);
    }
    if scenario.world.is_empty() {
        for t in [&mut q_center, &mut q_tube, &mut q_logged, &mut clearance, &mut d_hat_level] {
            t.detail = "no obstacles".into();
        }
    }
    if config.stages.is_empty() {
        funnel.worst = 0.0;
        funnel.detail = "single-stage plant".into();
    }

    let mut initial = Tracker::max("initial_tube_in_start", sets.d_s);
    if let Some(s0) = steps.first() {
        let extent = (vector(&s0.c) - &sets.s).norm() + s0.r;
        initial.observe(0, extent, extent <= sets.d_s);
    } else {
        initial.observe(0, f64::INFINITY, false);
    }

    let reach = reach_and_stay(log, scenario);

    let expected_steps = scenario.step_count() + 1;
    let mut completed = Tracker::min("run_completed", expected_steps as f64);
    completed.observe(
        steps.len().saturating_sub(1),
        steps.len() as f64,
        log.summary.completed && steps.len() == expected_steps,
    );
    completed.detail = match &log.summary.failure {
        Some(f) => format!("{} failure at step {}: {}", f.class, f.step, f.message),
        None if steps.len() < expected_steps => {
            format!("{} of {expected_steps} steps logged", steps.len())
        }
        None => String::new(),
    };

    let mut checks = vec![
        form.finish(),
        containment.finish(),
        radius_low.finish(),
        radius_high.finish(),
        q_center.finish(),
        q_tube.finish(),
        q_logged.finish(),
        clearance.finish(),
        d_hat_level.finish(),
        funnel.finish(),
        initial.finish(),
        reach,
    ];
    if let Some(bound) = scenario.derivative_bound_assert {
        let mut rate = Tracker::max("derivative_bound", bound);
        for (i, w) in steps.windows(2).enumerate() {
            let h = w[1].t - w[0].t;
            let dc = (vector(&w[1].c) - vector(&w[0].c)).norm() / h;
            let dr = (w[1].r - w[0].r).abs() / h;
            let v = dc.max(dr);
            rate.observe(i + 1, v, v <= bound);
        }
        checks.push(rate.finish());
    }
    checks.push(completed.finish());

    VerificationReport {
        scenario: log.header.scenario.clone(),
        steps_checked: steps.len(),
        checks,
        monte_carlo: None,
    }
}

/// Γ(t) ⊂ T̂ from some t_reach on, and from the last entry until the end of
/// the log for at least the stay window. Also cross-checks the summary.
fn reach_and_stay(log: &TrajectoryLog, scenario: &Scenario) -> CheckResult {
    let sets = &scenario.sets;
    let inside: Vec<bool> = log
        .steps
        .iter()
        .map(|s| (vector(&s.c) - &sets.eta).norm() + s.r <= sets.d_t)
        .collect();
    let threshold = scenario.stay_window;
    let first = inside.iter().position(|&b| b);
    let Some(first) = first else {
        return CheckResult {
            name: "reach_and_stay".into(),
            passed: false,
            statistic: 0.0,
            threshold,
            margin: -threshold,
            first_failure: None,
            detail: "not reached".into(),
        };
    };
    let last_entry = (0..inside.len())
        .rev()
        .find(|&i| inside[i] && (i == 0 || !inside[i - 1]))
        .filter(|_| *inside.last().unwrap());
    let t_end = log.steps.last().map_or(0.0, |s| s.t);
    let t_reach = log.steps[first].t;
    let exits = inside.windows(2).filter(|w| w[0] && !w[1]).count();

    let (stay, detail) = match last_entry {
        Some(i) => {
            let stay = t_end - log.steps[i].t;
            (stay, format!("t_reach = {t_reach}, last entry t = {}, {exits} exits", log.steps[i].t))
        }
        None => (0.0, format!("t_reach = {t_reach}, left the target before the end")),
    };
    let mut passed = last_entry.is_some() && stay >= threshold - 0.5 * log.header.dt;
    let mut detail = detail;
    if log.summary.t_reach != Some(t_reach) || log.summary.exits != exits {
        passed = false;
        detail.push_str("; log summary disagrees with the recomputed reach bookkeeping");
    }
    CheckResult {
        name: "reach_and_stay".into(),
        passed,
        statistic: stay,
        threshold,
        margin: stay - threshold,
        first_failure: if passed { None } else { Some(first) },
        detail,
    }
}

/// Indices of `times` logged steps spread evenly from first to last.
fn sample_indices(len: usize, times: usize) -> Vec<usize> {
    if times >= len {
        return (0..len).collect();
    }
    if times == 1 {
        return vec![len - 1];
    }
    let mut idx: Vec<usize> = (0..times)
        .map(|k| ((k as f64) * (len - 1) as f64 / (times - 1) as f64).round() as usize)
        .collect();
    idx.dedup();
    idx
}

/// Empirical frequency of ‖c − O‖ ≥ r_o + r with O ~ N(μ, σ²I), drawn from
/// the stream owned by (instant, obstacle).
fn empirical_avoid(
    c: &DVector<f64>,
    mu: &DVector<f64>,
    sigma: f64,
    clearance: f64,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let n = c.len();
    let limit = clearance * clearance;
    let mut hits = 0usize;
    for _ in 0..samples {
        let mut dist2 = 0.0;
        for i in 0..n {
            let z: f64 = StandardNormal.sample(rng);
            let d = c[i] - (mu[i] + sigma * z);
            dist2 += d * d;
        }
        if dist2 >= limit {
            hits += 1;
        }
    }
    hits as f64 / samples as f64
}

fn stream_rng(seed: u64, instant: usize, obstacle: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((instant as u64) << 32) | obstacle as u64);
    rng
}

/// Monte Carlo check of P(‖c(t) − O_j(t)‖ ≥ r_o,j(t) + r(t)) ≥ ε_j at `times`
/// evenly spaced logged instants.
pub fn mc_avoidance(log: &TrajectoryLog, world: &World, samples: usize, times: usize, seed: u64) -> Result<McReport> {
    if samples < MIN_MC_SAMPLES {
        return Err(Error::Domain(format!("need at least {MIN_MC_SAMPLES} samples, got {samples}")));
    }
    if times == 0 || log.steps.is_empty() {
        return Err(Error::Domain("nothing to sample: no instants requested or empty log".into()));
    }
    if log.header.dim != world.dim() {
        return Err(Error::Dimension {
            expected: world.dim(),
            got: log.header.dim,
        });
    }
    let indices = sample_indices(log.steps.len(), times);
    let n_obs = world.len();
    let units: Vec<(usize, usize)> = (0..indices.len())
        .flat_map(|k| (0..n_obs).map(move |j| (k, j)))
        .collect();
    let results: Vec<Result<(f64, f64)>> = units
        .par_iter()
        .map(|&(k, j)| {
            let step = &log.steps[indices[k]];
            let c = vector(&step.c);
            let snap = world.obstacles()[j].snapshot(step.t);
            let mut rng = stream_rng(seed, k, j);
            let freq = empirical_avoid(&c, &snap.mu, snap.sigma, snap.r_o + step.r, samples, &mut rng);
            let analytic = snap.avoid_probability(&c, snap.r_o + step.r)?;
            Ok((freq, analytic))
        })
        .collect();

    let mut obstacles: Vec<McObstacle> = world
        .obstacles()
        .iter()
        .enumerate()
        .map(|(j, ob)| {
            let eps = ob.epsilon;
            let threshold = eps - 3.0 * (eps * (1.0 - eps) / samples as f64).sqrt();
            McObstacle {
                obstacle: j,
                epsilon: eps,
                min_frequency: f64::INFINITY,
                worst_t: f64::NAN,
                threshold,
                margin: f64::INFINITY,
                max_z: 0.0,
                passed: true,
            }
        })
        .collect();
    for (&(k, j), res) in units.iter().zip(results) {
        let (freq, analytic) = res?;
        let o = &mut obstacles[j];
        let t = log.steps[indices[k]].t;
        if freq < o.min_frequency {
            o.min_frequency = freq;
            o.worst_t = t;
        }
        // the normal approximation behind z is only meaningful away from the tails
        let spread = analytic * (1.0 - analytic);
        if samples as f64 * spread >= 10.0 {
            let z = (freq - analytic).abs() / (spread / samples as f64).sqrt();
            o.max_z = o.max_z.max(z);
        }
        if !(freq >= o.threshold) {
            o.passed = false;
        }
    }
    for o in &mut obstacles {
        o.margin = o.min_frequency - o.threshold;
    }
    Ok(McReport {
        samples,
        seed,
        times_checked: indices.iter().map(|&i| log.steps[i].t).collect(),
        obstacles,
    })
}
