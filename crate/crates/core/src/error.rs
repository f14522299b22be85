use thiserror::Error;

/// Errors produced by the scoring, estimation and selection layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{what}: expected shape {expected}, got {actual}")]
    Shape { what: &'static str, expected: String, actual: String },

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("invalid value for {what}: {reason}")]
    InvalidValue { what: &'static str, reason: String },

    #[error("{what} = {value} is out of range {range}")]
    OutOfRange { what: &'static str, value: String, range: String },

    #[error("cosine distance is undefined for a zero-norm vector")]
    ZeroNorm,

    #[error("the estimator has not observed any frame yet")]
    NoObservations,

    #[error("candidate pool of {size} exceeds the exhaustive-search limit of {limit}; use the greedy filter instead")]
    PoolTooLarge { size: usize, limit: usize },
}

impl Error {
    pub(crate) fn shape(what: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape { what, expected: expected.to_string(), actual: actual.to_string() }
    }

    pub(crate) fn invalid(what: &'static str, reason: impl ToString) -> Self {
        Error::InvalidValue { what, reason: reason.to_string() }
    }

    pub(crate) fn out_of_range(what: &'static str, value: impl ToString, range: impl ToString) -> Self {
        Error::OutOfRange { what, value: value.to_string(), range: range.to_string() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
