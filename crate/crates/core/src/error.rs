use alloc::string::String;
use alloc::vec::Vec;

use crate::training::TraceRow;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch ({detail})")]
    Dimension { op: &'static str, detail: String },

    #[error("{op}: non-finite value")]
    InvalidValue { op: &'static str },

    #[error("softmax: every position is masked")]
    EmptySupport,

    #[error("{0}: empty input")]
    EmptyInput(&'static str),

    #[error("sequence of length {len} is shorter than the receptive field {needed}")]
    TooShort { len: usize, needed: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("function under gradient check is not deterministic")]
    Nondeterministic,

    #[error("no negative available: dataset needs at least two categories")]
    NoNegative,

    #[error("query has no relevant candidates")]
    UndefinedQuery,

    #[error("dataset validation failed: {0:?}")]
    Validation(Vec<String>),

    #[error("training diverged at step {step}")]
    Diverged { step: usize, trace: Vec<TraceRow> },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
