//! Crate-wide error type.

use thiserror::Error;

/// Everything that can go wrong between parsing a map and producing a report.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// Malformed expression source. `pos` is a byte offset into the source.
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    /// Identifier outside the whitelist (x1..xn, r, pi, e).
    #[error("unknown identifier `{name}` at byte {pos}")]
    UnknownIdentifier { name: String, pos: usize },

    /// Wrong number of expressions for the declared codomain dimension.
    #[error("expected {expected} expressions, found {found}")]
    ArityMismatch { expected: usize, found: usize },

    /// Evaluation left the domain of a primitive (log of a non-positive
    /// argument, division by zero, sqrt at or below zero, ...).
    #[error("domain error in expression {expr_index} at point {point:?}: {detail}")]
    Domain {
        expr_index: usize,
        point: Vec<f64>,
        detail: String,
    },

    /// A matrix that is positive definite for every real jet failed to
    /// factor. Signals NaN contamination upstream, not actual degeneracy.
    #[error("singular matrix in {context} (NaN contamination upstream?)")]
    SingularMatrix { context: String },

    /// Two algebraically equal computation paths disagreed beyond tolerance.
    #[error("path mismatch in {quantity}: {a} vs {b} (rel {rel:.3e} > tol {tol:.1e})")]
    PathMismatch {
        quantity: String,
        a: f64,
        b: f64,
        rel: f64,
        tol: f64,
    },

    /// Mass selector used below its minimal ambient dimension.
    #[error("{what} requires n >= {min_n}, got n = {n}")]
    Dimension { what: String, min_n: usize, n: usize },

    /// Power-law extrapolation could not explain the samples.
    #[error("extrapolation fit failed: {reason}")]
    FitFailure { reason: String },

    /// Hypersurface chart broke down (rho <= 0 or degenerate tangents).
    #[error("degenerate chart at angles {theta:?}: {detail}")]
    DegenerateChart { theta: Vec<f64>, detail: String },

    /// Symmetric eigensolver did not converge.
    #[error("eigensolver failed: {0}")]
    EigenFailure(String),

    /// Quadrature field evaluation produced a non-finite value.
    #[error("non-finite field value at node {node_index}: {detail}")]
    NonFiniteField { node_index: usize, detail: String },

    /// Invalid argument to a numeric routine.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Quadrature rule (de)serialization problems.
    #[error("rule io: {0}")]
    RuleIo(String),
}

pub type Result<T> = std::result::Result<T, Error>;
