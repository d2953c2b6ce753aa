use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    // cellsim
    #[error("solver diverged: {0}")]
    SolverDivergence(String),
    #[error("infeasible protocol: {0}")]
    InfeasibleProtocol(String),
    #[error("horizon too short: {horizon_efc} EFC (need at least {min})")]
    HorizonTooShort { horizon_efc: f64, min: f64 },
    #[error("empty capacity trajectory")]
    EmptyTrajectory,
    #[error("nominal capacity must be positive, got {0}")]
    NonPositiveCapacity(f64),

    // interpreter
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("simulation bank unusable: {failed} of {total} simulations failed")]
    AllFailed { failed: usize, total: usize },
    #[error("insufficient acceptance: {accepted} accepted, need {required}")]
    InsufficientAcceptance { accepted: usize, required: usize },
    #[error("infeasible stoichiometry balance: {0}")]
    InfeasibleBalance(String),
    #[error("cell mismatch: {0} vs {1}")]
    CellMismatch(String, String),

    // oracle
    #[error("corpus has a single cycling condition; meta-predictor would be degenerate")]
    SingleCondition,
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("feature {index} was constant at fit time and cannot be standardized")]
    Unstandardizable { index: usize },

    // learner
    #[error("cell type {0} has no groups")]
    EmptyType(String),
    #[error("kernel matrix factorization failed: {0}")]
    Factorization(String),

    // loop / metrics
    #[error("group {group} is missing a prediction for member {cell}")]
    MissingMember { group: String, cell: String },
    #[error("observed value is zero at index {0}")]
    ZeroObserved(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero variance: {0}")]
    ZeroVariance(&'static str),

    // dataio
    #[error("unsupported schema version {found} in {path} (expected {expected})")]
    SchemaVersion { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}:{line}: {message}")]
    Invariant { path: PathBuf, line: usize, message: String },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("infeasible generator config: {0}")]
    InfeasibleConfig(String),

    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Stable machine-readable tag for CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::SolverDivergence(_) => "solver_divergence",
            Error::InfeasibleProtocol(_) => "infeasible_protocol",
            Error::HorizonTooShort { .. } => "horizon_too_short",
            Error::EmptyTrajectory => "empty_trajectory",
            Error::NonPositiveCapacity(_) => "nonpositive_capacity",
            Error::InvalidPrior(_) => "invalid_prior",
            Error::AllFailed { .. } => "all_failed",
            Error::InsufficientAcceptance { .. } => "insufficient_acceptance",
            Error::InfeasibleBalance(_) => "infeasible_balance",
            Error::CellMismatch(..) => "cell_mismatch",
            Error::SingleCondition => "single_condition",
            Error::DegenerateData(_) => "degenerate_data",
            Error::NonConvergence(_) => "nonconvergence",
            Error::Unstandardizable { .. } => "unstandardizable_feature",
            Error::EmptyType(_) => "empty_type",
            Error::Factorization(_) => "factorization_failure",
            Error::MissingMember { .. } => "missing_member",
            Error::ZeroObserved(_) => "zero_observed",
            Error::LengthMismatch(..) => "length_mismatch",
            Error::ZeroVariance(_) => "zero_variance",
            Error::SchemaVersion { .. } => "schema_version",
            Error::Invariant { .. } => "invariant_violation",
            Error::MissingFile(_) => "missing_file",
            Error::InfeasibleConfig(_) => "infeasible_config",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
