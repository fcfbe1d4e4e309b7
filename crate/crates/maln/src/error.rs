use std::io;
use thiserror::Error;

/// Errors produced by this crate.
#[derive(Debug, Error)]
pub enum MalnError {
    /// Operand shapes are inconsistent.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A reduction was asked to fold zero elements.
    #[error("empty reduction")]
    EmptyReduction,

    /// An input value or argument violates a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// No monotonic alignment exists: fewer frames than tokens.
    #[error("infeasible alignment: {frames} frames cannot cover {tokens} tokens")]
    Infeasible { frames: usize, tokens: usize },

    /// The lattice total probability is exactly zero; posteriors are undefined.
    #[error("zero-probability lattice")]
    ZeroProbability,

    /// Every duration is zero, so the regulated output would have no frames.
    #[error("empty expansion: all durations are zero")]
    EmptyExpansion,

    /// A duration value is outside the domain of the requested operation.
    #[error("invalid duration: {0}")]
    InvalidDuration(String),

    /// The byte stream is not a well-formed tensor file.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Exhaustive alignment enumeration was refused.
    #[error("combinatorial limit exceeded: {count} alignments > limit {limit}")]
    CombinatorialLimit { count: u128, limit: u64 },

    /// A configuration cannot be satisfied.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Training produced a non-finite loss.
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, MalnError>;
