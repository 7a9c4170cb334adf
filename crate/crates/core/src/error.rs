use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("convergence error: {0}")]
    Convergence(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// The avoidance probability of the tube center fell to (or below) ε.
    #[error("barrier breach: obstacle {obstacle} has q = {q} <= epsilon = {epsilon}")]
    BarrierBreach { obstacle: usize, q: f64, epsilon: f64 },

    #[error("radius collapse: computed radius {radius} is not positive")]
    RadiusCollapse { radius: f64 },

    #[error("step collapse at t = {t}: barrier still breached after {halvings} halvings")]
    StepCollapse { t: f64, halvings: u32 },

    /// Output left the tube: e1 = ‖y − c‖ / r reached 1.
    #[error("tube violation: normalized error {e1} at t = {t}")]
    TubeViolation { t: f64, e1: f64 },

    #[error("funnel violation at stage {stage}, component {component}: normalized error {e} at t = {t}")]
    FunnelViolation {
        stage: usize,
        component: usize,
        e: f64,
        t: f64,
    },

    #[error("numerical blow-up: non-finite plant state at t = {t}")]
    NumericalBlowup { t: f64 },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("log format error: {0}")]
    Log(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// True for violations of the tube / funnel invariants (as opposed to
    /// purely numerical failures).
    pub fn is_invariant_violation(&self) -> bool {
        matches!(
            self,
            Error::BarrierBreach { .. }
                | Error::RadiusCollapse { .. }
                | Error::TubeViolation { .. }
                | Error::FunnelViolation { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
