use thiserror::Error;

/// Broad failure classes, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Validation,
    Unobservable,
    Solver,
    Budget,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema violation: {0}")]
    Schema(String),

    #[error("duplicate bus id `{0}`")]
    DuplicateBus(String),

    #[error("duplicate node {bus}.{phase}")]
    DuplicateNode { bus: String, phase: String },

    #[error("branch `{branch}` references missing node {bus}.{phase}")]
    DanglingEndpoint {
        branch: String,
        bus: String,
        phase: String,
    },

    #[error("invalid branch `{branch}`: {reason}")]
    InvalidBranch { branch: String, reason: String },

    #[error("network must have exactly one feeder head, found {0}")]
    FeederHead(usize),

    #[error("network is disconnected; buses unreachable from the feeder head: {unreached:?}")]
    Disconnected { unreached: Vec<String> },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("measurement {index} has non-positive or non-finite sigma {sigma}")]
    InvalidVariance { index: usize, sigma: f64 },

    #[error("invalid reference: {0}")]
    InvalidReference(String),

    #[error("no angle anchor for the component containing nodes {nodes:?}")]
    MissingAnchor { nodes: Vec<usize> },

    #[error("lifted matrix is degenerate (largest eigenvalue {lambda})")]
    DegenerateLifting { lambda: f64 },

    #[error("rank-1 quality ratio {ratio:.3e} exceeds the rejection threshold {limit:.1e}")]
    RankGate { ratio: f64, limit: f64 },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("efficiency {0} is outside (0, 1]")]
    EfficiencyOutOfRange(f64),

    #[error("branch `{0}` already has flow measurements at both ends")]
    BothEndsPresent(String),

    #[error("measurement set is unobservable: {0}")]
    Unobservable(String),

    #[error("invalid partition plan: {0}")]
    InvalidPlan(String),

    #[error("sub-network {index} failed: {cause}")]
    SubNetwork { index: usize, cause: Box<Error> },

    #[error("{combinations} suspect combinations exceed the budget of {cap}; raise the detection threshold or the cap")]
    BudgetExceeded { combinations: usize, cap: usize },

    #[error("node sets differ: {0}")]
    NodeSetMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Unobservable(_) | Error::MissingAnchor { .. } | Error::RankGate { .. } => {
                ErrorCategory::Unobservable
            }
            Error::Solver(_) | Error::DegenerateLifting { .. } => ErrorCategory::Solver,
            Error::BudgetExceeded { .. } => ErrorCategory::Budget,
            Error::SubNetwork { cause, .. } => cause.category(),
            _ => ErrorCategory::Validation,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
