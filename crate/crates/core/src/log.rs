//! Trajectory log: a versioned JSON-lines file.
//!
//! Line 1 is the header, then one line per logged step, then a summary line.
//! Floats are written in shortest round-trip form, so identical runs produce
//! byte-identical files.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::controller::ControllerConfig;
use crate::error::{Error, Result};

pub const LOG_FORMAT: &str = "sttk-trajectory";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub version: u32,
    pub scenario: String,
    pub dim: usize,
    pub stages: usize,
    pub obstacles: usize,
    pub dt: f64,
    pub horizon: f64,
    pub stay_window: f64,
    pub seed: u64,
    /// Controller parameters after defaults were filled in.
    pub controller: ControllerConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Reach,
    Exit,
    ReReach,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub c: Vec<f64>,
    pub r: f64,
    pub y: Vec<f64>,
    /// x_1..x_N.
    pub xbar: Vec<Vec<f64>>,
    pub u: Vec<f64>,
    pub q: Vec<f64>,
    pub d_hat: Vec<f64>,
    pub theta: Vec<f64>,
    /// Soft-min clearance d(t); absent without obstacles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub substeps: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<EventKind>,
}

fn one() -> u32 {
    1
}

fn is_one(v: &u32) -> bool {
    *v == 1
}

impl StepRecord {
    pub fn is_finite(&self) -> bool {
        let scalars = [self.t, self.r];
        scalars
            .iter()
            .chain(&self.c)
            .chain(&self.y)
            .chain(self.xbar.iter().flatten())
            .chain(&self.u)
            .chain(&self.q)
            .chain(&self.d_hat)
            .chain(&self.theta)
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    /// Index of the step at which the error occurred.
    pub step: usize,
    pub t: f64,
    /// `invariant` or `numerical`.
    pub class: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub completed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
    /// First time Γ(t) ⊂ T̂.
    pub t_reach: Option<f64>,
    /// Start of the last stretch inside T̂ (if the run ended inside).
    pub final_entry: Option<f64>,
    pub exits: usize,
    pub stay_satisfied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub header: LogHeader,
    pub steps: Vec<StepRecord>,
    pub summary: RunSummary,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(LogHeader),
    Step(StepRecord),
    Summary(RunSummary),
}

impl TrajectoryLog {
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let mut emit = |line: &Line| -> Result<()> {
            serde_json::to_writer(&mut out, line).map_err(|e| Error::Log(e.to_string()))?;
            out.write_all(b"\n")?;
            Ok(())
        };
        emit(&Line::Header(self.header.clone()))?;
        for step in &self.steps {
            emit(&Line::Step(step.clone()))?;
        }
        emit(&Line::Summary(self.summary.clone()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from(input: impl BufRead) -> Result<Self> {
        let mut header = None;
        let mut steps = Vec::new();
        let mut summary = None;
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line)
                .map_err(|e| Error::Log(format!("line {}: {e}", idx + 1)))?;
            match parsed {
                Line::Header(h) => {
                    if h.format != LOG_FORMAT || h.version != LOG_VERSION {
                        return Err(Error::Log(format!(
                            "unsupported log format {} v{}",
                            h.format, h.version
                        )));
                    }
                    header = Some(h)
                }
                Line::Step(s) => steps.push(s),
                Line::Summary(s) => summary = Some(s),
            }
        }
        let header = header.ok_or_else(|| Error::Log("missing header line".into()))?;
        Ok(Self {
            header,
            steps,
            // a log cut short has no summary; treat it as an incomplete run
            summary: summary.unwrap_or_default(),
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::read_from(std::io::BufReader::new(file))
    }

    /// CSV with columns t, c_*, r, y_*, u_*, then q_j, dhat_j, theta_j per obstacle.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        let n = self.header.dim;
        let mut cols = vec!["t".to_string()];
        cols.extend((1..=n).map(|i| format!("c_{i}")));
        cols.push("r".into());
        cols.extend((1..=n).map(|i| format!("y_{i}")));
        cols.extend((1..=n).map(|i| format!("u_{i}")));
        for j in 1..=self.header.obstacles {
            cols.push(format!("q_{j}"));
            cols.push(format!("dhat_{j}"));
            cols.push(format!("theta_{j}"));
        }
        writeln!(out, "{}", cols.join(","))?;
        for s in &self.steps {
            let mut row: Vec<f64> = vec![s.t];
            row.extend(&s.c);
            row.push(s.r);
            row.extend(&s.y);
            row.extend(&s.u);
            for j in 0..self.header.obstacles {
                row.extend([s.q[j], s.d_hat[j], s.theta[j]]);
            }
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}
