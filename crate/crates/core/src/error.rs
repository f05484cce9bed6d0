//! Error type shared by every module of the crate.

use thiserror::Error;

/// Everything that can go wrong while building tables, operators or oracles.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum IsrError {
    /// A parameter is outside its admissible range.
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    /// A coefficient was requested outside the state domain of the model.
    #[error("state ({x}, {y}) is outside the model domain: {reason}")]
    Domain { x: f64, y: f64, reason: &'static str },

    /// A coefficient, derivative or result came out NaN or infinite.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// A differential operator exceeded the supported degree or order.
    #[error("operator bound exceeded: {what} = {got} > {max}")]
    OperatorBound {
        what: &'static str,
        got: u32,
        max: u32,
    },

    /// The radicand of the square root is not positive.
    #[error("radicand {value} is not positive ({context})")]
    Radicand { value: f64, context: &'static str },

    /// A numerical oracle failed.
    #[error("oracle failure: {0}")]
    Oracle(String),

    /// An option that is not supported in combination with the others.
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, IsrError>;

/// Rejects NaN and infinities, labelling the error with `context`.
pub(crate) fn finite(value: f64, context: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(IsrError::NonFinite {
            context: context.to_string(),
        })
    }
}

pub(crate) fn invalid(name: &'static str, value: f64, reason: &'static str) -> IsrError {
    IsrError::InvalidParameter {
        name,
        value,
        reason,
    }
}
