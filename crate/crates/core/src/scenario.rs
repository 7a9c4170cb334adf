//! Scenario files and the bundled case studies.
//!
//! Scenarios are TOML documents with the top-level tables `sets`, `tube`,
//! `obstacles`, `controller`, `plant` and `run`. Parse errors carry the key
//! path of the offending entry.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::controller::StageSpec;
use crate::error::{Error, Result};
use crate::plants::{PlantKind, PlantSpec};
use crate::tube::{SetSpec, TubeGains};
use crate::world::{Profile, UncertainObstacle, WaypointPath, World};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_CORRELATION_TIME: f64 = 0.5;
/// Default stay window as a fraction of the horizon.
pub const DEFAULT_STAY_FRACTION: f64 = 0.2;

/// Name and TOML source of every scenario shipped with the crate.
pub const BUNDLED: &[(&str, &str)] = &[
    ("paper_2d_hw_case", include_str!("../scenarios/paper_2d_hw_case.toml")),
    ("paper_2d_sim50", include_str!("../scenarios/paper_2d_sim50.toml")),
    ("paper_uav3d", include_str!("../scenarios/paper_uav3d.toml")),
    ("obstacle_free", include_str!("../scenarios/obstacle_free.toml")),
    ("disturbed_double_integrator", include_str!("../scenarios/disturbed_double_integrator.toml")),
];

pub fn bundled_source(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, src)| *src)
}

pub fn bundled(name: &str) -> Result<Scenario> {
    let src = bundled_source(name)
        .ok_or_else(|| Error::Scenario(format!("no bundled scenario named `{name}`")))?;
    Scenario::from_toml(src)
}

/// A scalar or a list of `[t, value]` breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileFile {
    Constant(f64),
    Points(Vec<[f64; 2]>),
}

impl ProfileFile {
    fn into_profile(self) -> Result<Profile> {
        match self {
            ProfileFile::Constant(v) => Ok(Profile::constant(v)),
            ProfileFile::Points(pts) => Profile::new(pts.into_iter().map(|[t, v]| (t, v)).collect()),
        }
    }
}

/// A per-stage value given once for all stages or as a list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerStage {
    Uniform(f64),
    Each(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetsFile {
    pub s: Vec<f64>,
    pub d_s: f64,
    pub eta: Vec<f64>,
    pub d_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeFile {
    pub k1: f64,
    pub nu: f64,
    pub r_min: f64,
    pub r_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleFile {
    /// Rows of `[t, x_1, ..., x_n]`.
    pub waypoints: Vec<Vec<f64>>,
    pub sigma: ProfileFile,
    pub r_o: ProfileFile,
    pub epsilon: f64,
    pub p_d: f64,
    pub k2: f64,
    pub k3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerFile {
    pub kappa1: f64,
    #[serde(default)]
    pub stages: Vec<StageSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantFile {
    pub kind: PlantKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<usize>,
    #[serde(default = "zero_bound")]
    pub disturbance_bound: PerStage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation_time: Option<f64>,
    /// Stacked x_1..x_N. Defaults to y(0) = s with the other stages at rest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
}

fn zero_bound() -> PerStage {
    PerStage::Uniform(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stay_window: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Bound on ‖ċ‖ and |ṙ| checked step-to-step by the audit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derivative_bound: Option<f64>,
}

/// On-disk scenario layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub sets: SetsFile,
    pub tube: TubeFile,
    #[serde(default)]
    pub obstacles: Vec<ObstacleFile>,
    pub controller: ControllerFile,
    pub plant: PlantFile,
    pub run: RunFile,
}

impl ScenarioFile {
    pub fn parse(src: &str) -> Result<Self> {
        let de = toml::Deserializer::new(src);
        serde_path_to_error::deserialize(de).map_err(|err| {
            let path = err.path().to_string();
            let inner = err.into_inner();
            let message = inner.message().to_string();
            let location = inner
                .span()
                .map(|span| {
                    let line = src[..span.start.min(src.len())].matches('\n').count() + 1;
                    format!(" (line {line})")
                })
                .unwrap_or_default();
            Error::Scenario(format!("at `{path}`{location}: {message}"))
        })
    }
}

/// Controller settings before funnel defaults are filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSpec {
    pub kappa1: f64,
    pub stages: Vec<StageSpec>,
}

/// A fully typed scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub sets: SetSpec,
    pub world: World,
    pub tube_gains: TubeGains,
    pub controller: ControllerSpec,
    pub plant: PlantSpec,
    pub dt: f64,
    pub horizon: f64,
    pub stay_window: f64,
    pub seed: u64,
    pub derivative_bound_assert: Option<f64>,
}

fn vector(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

impl Scenario {
    pub fn from_toml(src: &str) -> Result<Self> {
        Self::from_file(ScenarioFile::parse(src)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&src)
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self> {
        let dim = file.sets.s.len();
        if dim == 0 || file.sets.eta.len() != dim {
            return Err(Error::Scenario(format!(
                "at `sets`: s and eta must have the same positive dimension (got {} and {})",
                dim,
                file.sets.eta.len()
            )));
        }
        let sets = SetSpec {
            s: vector(&file.sets.s),
            d_s: file.sets.d_s,
            eta: vector(&file.sets.eta),
            d_t: file.sets.d_t,
        };
        let obstacles = file
            .obstacles
            .into_iter()
            .enumerate()
            .map(|(j, ob)| {
                let ctx = |e: Error| Error::Scenario(format!("at `obstacles[{j}]`: {e}"));
                let waypoints = ob
                    .waypoints
                    .iter()
                    .map(|row| {
                        if row.len() != dim + 1 {
                            Err(Error::Scenario(format!(
                                "waypoint rows must be [t, x_1..x_{dim}], got {} entries",
                                row.len()
                            )))
                        } else {
                            Ok((row[0], vector(&row[1..])))
                        }
                    })
                    .collect::<Result<Vec<_>>>()
                    .map_err(ctx)?;
                Ok(UncertainObstacle {
                    mean_motion: WaypointPath::new(waypoints).map_err(ctx)?,
                    sigma: ob.sigma.into_profile().map_err(ctx)?,
                    radius: ob.r_o.into_profile().map_err(ctx)?,
                    epsilon: ob.epsilon,
                    p_d: ob.p_d,
                    k2: ob.k2,
                    k3: ob.k3,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let world = World::new(dim, obstacles)?;

        let tube_gains = TubeGains {
            k1: file.tube.k1,
            nu: file.tube.nu,
            r_min: file.tube.r_min,
            r_max: file.tube.r_max,
        };

        let kind = file.plant.kind;
        let stages = file.plant.stages.unwrap_or_else(|| kind.required_stages());
        let plant_dim = file.plant.dim.unwrap_or(dim);
        let initial_state = match file.plant.initial_state {
            Some(flat) => {
                if flat.len() != plant_dim * stages {
                    return Err(Error::Scenario(format!(
                        "at `plant.initial_state`: expected {} values, got {}",
                        plant_dim * stages,
                        flat.len()
                    )));
                }
                flat.chunks(plant_dim).map(vector).collect()
            }
            None => {
                let mut xs = vec![DVector::zeros(plant_dim); stages];
                if plant_dim == dim {
                    xs[0] = sets.s.clone();
                }
                xs
            }
        };
        let disturbance_bound = match file.plant.disturbance_bound {
            PerStage::Uniform(b) => vec![b; stages],
            PerStage::Each(v) => v,
        };
        let plant = PlantSpec {
            kind,
            dim: plant_dim,
            stages,
            disturbance_bound,
            correlation_time: file.plant.correlation_time.unwrap_or(DEFAULT_CORRELATION_TIME),
            initial_state,
        };

        let horizon = file.run.horizon;
        let seed = file
            .run
            .seed
            .or_else(|| std::env::var("STTK_SEED").ok().and_then(|s| s.trim().parse().ok()))
            .unwrap_or(0);
        Ok(Scenario {
            name: file.name,
            sets,
            world,
            tube_gains,
            controller: ControllerSpec {
                kappa1: file.controller.kappa1,
                stages: file.controller.stages,
            },
            plant,
            dt: file.tube.dt.unwrap_or(DEFAULT_DT),
            horizon,
            stay_window: file.run.stay_window.unwrap_or(DEFAULT_STAY_FRACTION * horizon),
            seed,
            derivative_bound_assert: file.run.derivative_bound,
        })
    }

    pub fn dim(&self) -> usize {
        self.world.dim()
    }

    /// Number of integration steps covering the horizon.
    pub fn step_count(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}
