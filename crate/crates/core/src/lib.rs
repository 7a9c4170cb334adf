//! Spatiotemporal tube (STT) synthesis for probabilistic temporal
//! reach-avoid-stay tasks among moving obstacles with Gaussian position
//! uncertainty.
//!
//! The crate is organised bottom-up:
//!
//! - [`special`]: non-central chi-squared CDF / density / quantile.
//! - [`world`]: time-varying uncertain obstacles and probability queries.
//! - [`tube`]: online center integration and closed-form radius law.
//! - [`controller`]: the model-free funnel controller keeping the output in the tube.
//! - [`plants`]: simulated pure-feedback systems the controller drives.
//! - [`engine`]: the closed-loop simulation producing a [`TrajectoryLog`].
//! - [`verify`]: log auditing and Monte Carlo avoidance certification.
//! - [`scenario`]: the scenario file format and bundled scenarios.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod controller;
pub mod engine;
pub mod error;
pub mod log;
pub mod plants;
pub mod scenario;
pub mod special;
pub mod tube;
pub mod vecops;
pub mod verify;
pub mod world;

pub use controller::{ControllerConfig, FunnelStageParams};
pub use engine::{run, validate, RunOutcome};
pub use error::{Error, Result};
pub use log::{LogHeader, StepRecord, TrajectoryLog};
pub use plants::{PlantKind, PlantSpec};
pub use scenario::{Scenario, ScenarioFile};
pub use special::{ncx2_cdf, ncx2_pdf, ncx2_quantile, Ncx2Params};
pub use tube::{SetSpec, TubeGains, TubeState};
pub use verify::{audit, mc_avoidance, VerificationReport};
pub use world::{ObstacleSnapshot, UncertainObstacle, World};

pub use nalgebra::DVector;
