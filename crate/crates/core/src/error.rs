//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("expected {expected} constraints, got {got}")]
    ConstraintCount { expected: usize, got: usize },

    #[error("penalty is undefined before any constraints are pushed")]
    EmptyPenalty,

    #[error("point outside the domain box")]
    PointOutsideDomain,

    #[error("not a strict Slater point: constraint {index} evaluates to {value}")]
    NotSlater { index: usize, value: f64 },

    #[error("condition 2 violated: beta = {0} must be positive")]
    NonPositiveBeta(f64),

    #[error("no boundary: {0}")]
    NoBoundary(String),

    #[error("grid search supports at most two dimensions, got {0}")]
    GridDimension(usize),

    #[error("solver stalled: best certified gap {gap:.3e} exceeds tolerance {tol:.3e} after {iterations} iterations")]
    SolverStalled {
        tol: f64,
        gap: f64,
        iterations: usize,
        /// Best iterate found before giving up.
        best: Vec<f64>,
    },

    #[error("exact penalty failed: weight reached {gamma} without a feasible minimizer")]
    PenaltyNotExact { gamma: f64 },

    #[error(
        "benchmark set empty: every grid point violates some prefix by step {first_infeasible}"
    )]
    EmptyBenchmark { first_infeasible: usize },

    #[error("non-finite value encountered at round {round}")]
    NonFinite { round: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("round {round}: {source}")]
    AtRound {
        round: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wrap an error with the round index at which it occurred.
    pub fn at_round(self, round: usize) -> Self {
        Error::AtRound {
            round,
            source: Box::new(self),
        }
    }
}
