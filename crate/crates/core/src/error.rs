//! Error types shared across the crate.

use thiserror::Error;

use crate::space::SpaceId;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by geometric and numeric operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Two values that must live in the same space do not.
    #[error("space mismatch: expected `{expected}`, got `{got}`")]
    SpaceMismatch { expected: SpaceId, got: SpaceId },

    /// A sequence rule violates the constraints of its role
    /// (e.g. a decay-weight rule that is not strictly decreasing).
    #[error("invalid sequence rule: {0}")]
    InvalidRule(String),

    /// An argument lies outside the declared domain of a map or probe.
    #[error("outside domain: {0}")]
    OutsideDomain(String),

    /// Structurally invalid input: wrong arity, wrong dimensions,
    /// incompatible factors, or a malformed construction.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A probe falsified a property the construction requires;
    /// the message carries a witness.
    #[error("rejected: {0}")]
    Rejected(String),

    /// Declared bounds were contradicted during iteration
    /// (an iterate escaped the working ball).
    #[error("inconsistent bounds: {0}")]
    InconsistentBounds(String),

    /// A linear system required by the operation is singular.
    #[error("singular system: {0}")]
    Singular(String),

    /// The operation is only implemented for a restricted configuration.
    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    /// Expression parse failure (byte offset into the source text).
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// Expression evaluation failure (path into the syntax tree).
    #[error("evaluation error at `{path}`: {message}")]
    Eval { path: String, message: String },
}
