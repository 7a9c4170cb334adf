//! Closed-loop simulation: world → tube → controller → plant, once per step.

use std::time::{Duration, Instant};

use nalgebra::DVector;

use crate::controller::{check_initialization, control_input, ControllerConfig};
use crate::error::{Error, Result};
use crate::log::{EventKind, Failure, LogHeader, RunSummary, StepRecord, TrajectoryLog, LOG_FORMAT, LOG_VERSION};
use crate::plants::{plant_step, Disturbance};
use crate::scenario::Scenario;
use crate::tube::{TubeSample, TubeSynthesizer};

/// Everything wrong with a scenario; empty means it can be run.
pub fn validate(scenario: &Scenario) -> Vec<String> {
    let mut out = Vec::new();
    let sets = &scenario.sets;
    let dim = scenario.dim();
    if !(sets.d_s > 0.0 && sets.d_t > 0.0) {
        out.push("set radii d_S and d_T must be positive".to_string());
    }
    out.extend(scenario.tube_gains.validate(sets));
    for (j, ob) in scenario.world.obstacles().iter().enumerate() {
        out.extend(ob.validate().into_iter().map(|m| format!("obstacle {j}: {m}")));
    }
    out.extend(scenario.plant.validate().into_iter().map(|m| format!("plant: {m}")));
    if scenario.plant.dim != dim {
        out.push(format!(
            "plant dimension {} differs from the output space dimension {dim}",
            scenario.plant.dim
        ));
    }
    if scenario.controller.stages.len() + 1 != scenario.plant.stages {
        out.push(format!(
            "controller needs {} funnel stages for a {}-stage plant, got {}",
            scenario.plant.stages.saturating_sub(1),
            scenario.plant.stages,
            scenario.controller.stages.len()
        ));
    }
    if !(scenario.controller.kappa1 > 0.0) {
        out.push("kappa1 must be positive".to_string());
    }
    if !(scenario.dt > 0.0 && scenario.horizon > scenario.dt) {
        out.push("need 0 < dt < horizon".to_string());
    }
    if !(scenario.stay_window >= 0.0) {
        out.push("stay window must be non-negative".to_string());
    }
    if !out.is_empty() {
        return out;
    }

    // initial separation: q_j(s, 0) > ε_j
    let snaps = scenario.world.snapshots(0.0);
    for (j, (ob, snap)) in scenario.world.obstacles().iter().zip(&snaps).enumerate() {
        match snap.q_center(&sets.s, scenario.tube_gains.r_min) {
            Ok(q) if q > ob.epsilon => {}
            Ok(q) => out.push(format!(
                "initial separation: obstacle {j} has q(s, 0) = {q} <= epsilon = {}",
                ob.epsilon
            )),
            Err(e) => out.push(format!("initial separation: obstacle {j}: {e}")),
        }
    }
    if !out.is_empty() {
        return out;
    }

    let tube = match TubeSynthesizer::new(scenario.world.clone(), sets.clone(), scenario.tube_gains) {
        Ok(t) => t,
        Err(e) => {
            out.push(format!("initial tube: {e}"));
            return out;
        }
    };
    let state = tube.state();
    if !sets.tube_in_start(&state.c, state.r) {
        out.push("initial tube does not fit inside the initial set".to_string());
    }
    let xbar0 = &scenario.plant.initial_state;
    if (&xbar0[0] - &state.c).norm() >= state.r {
        out.push("initial containment: y(0) is not inside Γ(0)".to_string());
        return out;
    }
    match ControllerConfig::resolve(scenario.controller.kappa1, &scenario.controller.stages, xbar0, state) {
        Ok(cfg) => out.extend(check_initialization(xbar0, state, &cfg)),
        Err(e) => out.push(format!("controller: {e}")),
    }
    out
}

/// A finished (or aborted) run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: TrajectoryLog,
    /// Wall-clock time per simulated step, kept out of the log for determinism.
    pub mean_step_latency: Duration,
    pub max_step_latency: Duration,
}

impl RunOutcome {
    pub fn error_class(&self) -> Option<&str> {
        self.log.summary.failure.as_ref().map(|f| f.class.as_str())
    }
}

fn classify(err: &Error) -> &'static str {
    if err.is_invariant_violation() {
        "invariant"
    } else {
        "numerical"
    }
}

fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

#[derive(Default)]
struct ReachTracker {
    inside: bool,
    t_reach: Option<f64>,
    entry: Option<f64>,
    exits: usize,
}

impl ReachTracker {
    fn update(&mut self, t: f64, inside: bool) -> Option<EventKind> {
        let event = match (self.inside, inside) {
            (false, true) => {
                self.entry = Some(t);
                Some(if self.t_reach.is_none() {
                    self.t_reach = Some(t);
                    EventKind::Reach
                } else {
                    EventKind::ReReach
                })
            }
            (true, false) => {
                self.exits += 1;
                self.entry = None;
                Some(EventKind::Exit)
            }
            _ => None,
        };
        self.inside = inside;
        event
    }
}

/// Simulate the scenario. Errors during the loop end the run early and are
/// recorded in the log summary; only an invalid scenario is an `Err`.
pub fn run(scenario: &Scenario) -> Result<RunOutcome> {
    let problems = validate(scenario);
    if !problems.is_empty() {
        return Err(Error::Scenario(problems.join("; ")));
    }
    let mut tube = TubeSynthesizer::new(scenario.world.clone(), scenario.sets.clone(), scenario.tube_gains)?;
    let mut xbar = scenario.plant.initial_state.clone();
    let config = ControllerConfig::resolve(
        scenario.controller.kappa1,
        &scenario.controller.stages,
        &xbar,
        tube.state(),
    )?;
    let mut disturbance = Disturbance::from_spec(&scenario.plant, scenario.seed);

    let header = LogHeader {
        format: LOG_FORMAT.to_string(),
        version: LOG_VERSION,
        scenario: scenario.name.clone(),
        dim: scenario.dim(),
        stages: scenario.plant.stages,
        obstacles: scenario.world.len(),
        dt: scenario.dt,
        horizon: scenario.horizon,
        stay_window: scenario.stay_window,
        seed: scenario.seed,
        controller: config.clone(),
    };

    let n_steps = scenario.step_count();
    let mut steps = Vec::with_capacity(n_steps + 1);
    let mut reach = ReachTracker::default();
    let mut failure = None;
    let mut total = Duration::ZERO;
    let mut slowest = Duration::ZERO;

    for i in 0..=n_steps {
        let started = Instant::now();
        let t = i as f64 * scenario.dt;
        let sample: &TubeSample = tube.current();
        let state = &sample.state;
        let control = match control_input(&xbar, state, &config, t) {
            Ok(c) => c,
            Err(e) => {
                failure = Some(Failure {
                    step: i,
                    t,
                    class: classify(&e).to_string(),
                    message: e.to_string(),
                });
                break;
            }
        };
        let inside = scenario.sets.tube_in_target(&state.c, state.r);
        let events: Vec<EventKind> = reach.update(t, inside).into_iter().collect();
        steps.push(StepRecord {
            t,
            c: to_vec(&state.c),
            r: state.r,
            y: to_vec(&xbar[0]),
            xbar: xbar.iter().map(to_vec).collect(),
            u: to_vec(&control.u),
            q: sample.diagnostics.iter().map(|d| d.q).collect(),
            d_hat: sample.diagnostics.iter().map(|d| d.d_hat).collect(),
            theta: sample.diagnostics.iter().map(|d| d.theta).collect(),
            d: sample.distance.is_finite().then_some(sample.distance),
            substeps: sample.substeps,
            events,
        });
        if i == n_steps {
            break;
        }

        let t_next = (i + 1) as f64 * scenario.dt;
        let advanced = plant_step(&scenario.plant, &xbar, &control.u, &mut disturbance, t, t_next - t)
            .and_then(|next| {
                xbar = next;
                tube.step_to(t_next).map(|_| ())
            });
        if let Err(e) = advanced {
            failure = Some(Failure {
                step: i + 1,
                t: t_next,
                class: classify(&e).to_string(),
                message: e.to_string(),
            });
            break;
        }
        let elapsed = started.elapsed();
        total += elapsed;
        slowest = slowest.max(elapsed);
    }

    let t_end = steps.last().map(|s| s.t).unwrap_or(0.0);
    let stay_satisfied = failure.is_none()
        && reach
            .entry
            .is_some_and(|entry| t_end - entry >= scenario.stay_window - 0.5 * scenario.dt);
    let summary = RunSummary {
        completed: failure.is_none(),
        failure,
        t_reach: reach.t_reach,
        final_entry: reach.entry,
        exits: reach.exits,
        stay_satisfied,
    };
    let count = steps.len().max(1) as u32;
    Ok(RunOutcome {
        log: TrajectoryLog {
            header,
            steps,
            summary,
        },
        mean_step_latency: total / count,
        max_step_latency: slowest,
    })
}
