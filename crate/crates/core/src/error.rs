use thiserror::Error;

/// Errors surfaced by the core library.
#[derive(Error, Debug)]
pub enum Error {
    #[error("index set cardinality exceeds cap of {cap} (stopped after {reached})")]
    CardinalityCap { cap: usize, reached: usize },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dense matrix of {rows}x{cols} entries exceeds cap of {cap}")]
    DenseCap { rows: usize, cols: usize, cap: usize },

    #[error("duplicate observation locations at indices {0} and {1}")]
    DuplicatePoints(usize, usize),

    #[error("design matrix is rank deficient: rank {rank} < {cols} columns, deficient columns {deficient:?}")]
    RankDeficient {
        rank: usize,
        cols: usize,
        deficient: Vec<usize>,
    },

    #[error("matrix is not positive definite at column {column} (pivot {pivot:.3e})")]
    NotPositiveDefinite { column: usize, pivot: f64 },

    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("likelihood is infeasible everywhere on the starting simplex; increase tau or the index level w")]
    InfeasibleStart,

    #[error("cholesky factorization of the sampling covariance failed even with jitter")]
    SamplingFactorization,

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("corrupt container: {0}")]
    Corrupt(String),
}

pub type Result<T> = std::result::Result<T, Error>;
