use alloc::string::String;

use crate::geometry::Site;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("window of {sites} sites exceeds addressable capacity")]
    Capacity { sites: u128 },

    #[error("site {0} lies outside the window")]
    OutOfRange(Site),

    #[error("time {time} is outside the usable range {lo}..={hi}")]
    TimeOutOfRange { time: i64, lo: i64, hi: i64 },

    /// A computation needs part of space-time that the window does not hold.
    #[error("structural violation: {0}")]
    Structural(String),

    #[error("window too large for exhaustive path enumeration ({0})")]
    OracleTooLarge(String),

    #[error("slice mismatch: {0} vs {1}")]
    SliceMismatch(i64, i64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }
}
