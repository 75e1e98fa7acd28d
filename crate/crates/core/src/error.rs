use thiserror::Error;

use crate::expr::ExprError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("zero fiber vector: the spatial part of y vanishes")]
    ZeroFiber,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("{what} is singular (magnitude {value:e})")]
    Singular { what: &'static str, value: f64 },
    #[error("point outside the admissible region: {0}")]
    OutOfDomain(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unknown catalog entry `{0}`")]
    UnknownCatalog(String),
    #[error("parameter constraint violated: {0}")]
    Constraint(String),
    #[error("rank-deficient design matrix (rank {rank} of {cols})")]
    RankDeficient { rank: usize, cols: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
