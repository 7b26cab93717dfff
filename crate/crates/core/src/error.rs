use alloc::string::String;
use alloc::vec::Vec;

use crate::ClassId;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    Rank(Vec<usize>),
    #[error("tape error: {0}")]
    Tape(&'static str),
    #[error("non-finite value in {what} at step {step}")]
    NonFinite { what: String, step: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("operation not available in {0} mode")]
    Mode(&'static str),
    #[error("{what} = {value} outside [{min}, {max}]")]
    Domain { what: &'static str, value: usize, min: usize, max: usize },
    #[error("class {0} is not present")]
    MissingClass(ClassId),
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("support set is empty")]
    EmptySupport,
    #[error("no seen classes in the statistics bank")]
    EmptyBank,
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
