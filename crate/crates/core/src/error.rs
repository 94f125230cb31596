use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An argument lies outside a configured validity window.
    #[error("range error: {0}")]
    Range(String),

    /// A configuration violates a structural invariant.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Two inputs that must agree (grids, bases, dimensions) do not.
    #[error("contract violation: {0}")]
    Contract(String),

    /// The lattice potential has no well-defined minimum.
    #[error("undefined displacement: {0}")]
    UndefinedDisplacement(String),

    /// An eigen-solve failed or did not converge under cutoff doubling.
    #[error("solver error: {0}")]
    Solver(String),

    /// Time integration could not meet its accuracy target.
    #[error("integrator error: {0}")]
    Integrator(String),

    /// A spectral analysis could not identify the requested feature.
    #[error("extraction error: {0}")]
    Extraction(String),

    /// A truncated basis lost more probability than allowed.
    #[error("truncation error: {0}")]
    Truncation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
