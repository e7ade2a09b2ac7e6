use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("relation is not reflexive: ({0}, {0}) missing")]
    NotReflexive(usize),

    #[error("scale {index} is not contained in the previous scale: pair ({x}, {y})")]
    NotNested { index: usize, x: usize, y: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("pair ({x}, {y}) is outside the unit scale, VOL* is undefined")]
    UndefinedPair { x: usize, y: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("inconsistency: {0}")]
    Inconsistency(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
