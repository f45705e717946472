use alloc::string::String;

use crate::tensor::Shape4;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs} vs {rhs}")]
    Dimension {
        op: &'static str,
        lhs: Shape4,
        rhs: Shape4,
    },
    #[error("invalid shape for {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("contract violated in {op}: {detail}")]
    Contract { op: &'static str, detail: String },
    #[error("unknown op `{0}`")]
    UnknownOp(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("finite-difference oracle produced a non-finite value at coordinate {index}")]
    OracleFailure { index: usize },
    #[error("non-finite loss term `{term}`")]
    NonFiniteLoss { term: &'static str },
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
}

impl Error {
    pub(crate) fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
