use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Shapes, partitions or model/ensemble combinations that do not fit.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error(
        "ensemble `{ensemble}` violates completeness at seed {seed}, position {position}: \
         deviation {deviation:e}"
    )]
    EnsembleInvalid { ensemble: String, seed: u64, position: i64, deviation: f64 },

    #[error("budget exceeded: {what} requires {required}, budget is {budget}")]
    Budget { what: String, required: u128, budget: u128 },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("internal consistency error: {0}")]
    Internal(String),
}
