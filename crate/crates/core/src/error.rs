use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("no convergence after {sweeps} sweeps (residual {residual:e})")]
    Convergence { sweeps: usize, residual: f64 },

    #[error("node {node} has no neighbors")]
    DegenerateNode { node: usize },

    #[error("node id {node} out of range for {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },

    #[error("column {column} has no observed entries")]
    FullyMissingColumn { column: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("mask selects no entries")]
    EmptyMask,

    #[error("training diverged at epoch {epoch}")]
    TrainingDivergence { epoch: usize },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
