use thiserror::Error;

/// Errors raised anywhere in the solve pipeline.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum CqrError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("the cubic term is not twice differentiable at s = 0 when beta != 0")]
    NonsmoothPoint,

    #[error("objective is unbounded below (sigma = beta = 0 and H is not positive definite)")]
    UnboundedBelow,

    #[error("eigensolver did not converge within {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("interior-point method hit the iteration cap ({iterations}); gap {gap:.3e}, pinf {pinf:.3e}, dinf {dinf:.3e}")]
    MaxIterations {
        iterations: usize,
        gap: f64,
        pinf: f64,
        dinf: f64,
    },

    #[error("ill-conditioned interior-point iterate: {0}")]
    IllConditioned(String),

    #[error("rank anomaly in multiplier block {block}: rank {rank} exceeds 2")]
    RankAnomaly { block: &'static str, rank: usize },

    #[error("inconsistent tightness evidence: {0}")]
    InconsistentEvidence(String),

    #[error("dimension {n} exceeds the oracle limit {limit}")]
    OracleLimit { n: usize, limit: usize },
}

pub type Result<T> = std::result::Result<T, CqrError>;
