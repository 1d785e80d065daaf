use thiserror::Error;

/// Errors raised by model construction and the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AoiiError {
    #[error("{field}: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("invalid state (delta={delta}, r={r}): {reason}")]
    InvalidState { delta: u64, r: u64, reason: &'static str },

    #[error("{series} did not fall below its cutoff within {depth} terms")]
    TruncationFailure { series: &'static str, depth: usize },

    #[error("no threshold satisfies the optimality condition below n0 = {ceiling}")]
    ThresholdNotFound { ceiling: u64 },

    #[error("penalty series diverges for this source/channel (boundedness condition fails)")]
    Unbounded,

    #[error("lambda bracket not found after {doublings} doublings")]
    LambdaBracket { doublings: u32 },
}

impl AoiiError {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        AoiiError::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, AoiiError>;
