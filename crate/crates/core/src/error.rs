use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("requested {requested} modes but only {available} are available")]
    TooManyModes { requested: usize, available: usize },

    #[error("{solver} did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("eigensolver failure: {0}")]
    Eigensolver(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("horizon below empirical control time: T = {horizon}, smallest Gramian eigenvalue {lambda_min:.3e}")]
    HorizonBelowControlTime { horizon: f64, lambda_min: f64 },

    #[error("quadrature under-resolved: doubling the rule changed an entry by {relative_change:.3e}")]
    QuadratureUnderResolved { relative_change: f64 },

    #[error("inadmissible horizon: {0}")]
    InadmissibleHorizon(String),

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("negative time {0}")]
    NegativeTime(f64),

    #[error("terminal state not null (relative norm {0:.3e}); extension would be discontinuous")]
    NotNullControlled(f64),

    #[error("terminal tolerance not met: achieved {achieved:.3e}, requested {requested:.3e}")]
    ToleranceNotMet { achieved: f64, requested: f64 },

    #[error("fit needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("non-positive cost {cost} at T = {horizon}")]
    NonPositiveCost { horizon: f64, cost: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("snapshot format error: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidDomain(_) | Error::InadmissibleHorizon(_) => 2,
            Error::GridTooCoarse(_) | Error::TooManyModes { .. } => 2,
            _ => 3,
        }
    }

    /// Short machine-readable tag used in error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidDomain(_) => "invalid_domain",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::TooManyModes { .. } => "too_many_modes",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Eigensolver(_) => "eigensolver",
            Error::NotPositiveDefinite(_) => "not_positive_definite",
            Error::HorizonBelowControlTime { .. } => "horizon_below_control_time",
            Error::QuadratureUnderResolved { .. } => "quadrature_under_resolved",
            Error::InadmissibleHorizon(_) => "inadmissible_horizon",
            Error::GridTooCoarse(_) => "grid_too_coarse",
            Error::NegativeTime(_) => "negative_time",
            Error::NotNullControlled(_) => "not_null_controlled",
            Error::ToleranceNotMet { .. } => "tolerance_not_met",
            Error::TooFewPoints { .. } => "too_few_points",
            Error::NonPositiveCost { .. } => "non_positive_cost",
            Error::Config(_) => "config",
            Error::Snapshot(_) => "snapshot",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}
