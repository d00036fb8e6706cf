use thiserror::Error;

/// Errors raised by the simulation and verification routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid offspring distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("offspring distribution has infinite mean; {0} is disabled")]
    InfiniteMean(&'static str),
    #[error("tau_not_observed: tau_{k} is not observed in the trace")]
    TauNotObserved { k: usize },
    #[error("local_times_not_recorded: the trace was recorded without the local_times observer")]
    LocalTimesNotRecorded,
    #[error("heights_not_recorded: the trace was recorded without the heights observer")]
    HeightsNotRecorded,
    #[error("urn_cap_exceeded: no termination within {cap} urn steps")]
    UrnCapExceeded { cap: u64 },
    #[error("step_cap_exceeded: reflected walk did not reach tau_{k} within {cap} steps")]
    StepCapExceeded { cap: u64, k: usize },
    #[error("requires_rho_gt_nubar: rho = {rho} must exceed the mean offspring count {nu_bar}")]
    RequiresRhoGtNubar { rho: f64, nu_bar: f64 },
    #[error("requires_rho_gt_one_plus_nubar: rho = {rho} must exceed 1 + {nu_bar}")]
    RequiresRhoGtOnePlusNubar { rho: f64, nu_bar: f64 },
    #[error("s_out_of_range: s = {s} must lie in (0, {upper})")]
    SOutOfRange { s: f64, upper: f64 },
    #[error("power iteration did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("need ≥ 3 grid points, got {0}")]
    NeedGridPoints(usize),
    #[error("need ≥ 5 crossings, got k_max = {0}")]
    NeedCrossings(usize),
    #[error("requires_critical_params: rho = {rho} is not equal to 1 + 2 * nu_bar")]
    RequiresCriticalParams { rho: f64 },
    #[error("dominance precondition violated: {0}")]
    DominanceViolated(String),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 numeric, 4 invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidDistribution(_)
            | Error::InvalidParams(_)
            | Error::InfiniteMean(_)
            | Error::RequiresRhoGtNubar { .. }
            | Error::RequiresRhoGtOnePlusNubar { .. }
            | Error::SOutOfRange { .. }
            | Error::NeedGridPoints(_)
            | Error::NeedCrossings(_)
            | Error::RequiresCriticalParams { .. }
            | Error::DominanceViolated(_)
            | Error::Config { .. } => 2,
            Error::NotConverged { .. }
            | Error::UrnCapExceeded { .. }
            | Error::StepCapExceeded { .. }
            | Error::TauNotObserved { .. }
            | Error::LocalTimesNotRecorded
            | Error::HeightsNotRecorded => 3,
            Error::InvariantViolation(_) => 4,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
