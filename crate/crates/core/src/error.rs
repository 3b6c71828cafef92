use alloc::string::String;

/// Errors raised by the elicitation engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Vector or matrix dimensions disagree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    /// The operation is not valid in the current state of the object.
    #[error("state error: {0}")]
    State(String),
    /// A numerical solver did not reach its tolerances.
    #[error("solver failure ({status}): {detail}")]
    Solver { status: String, detail: String },
    /// The multi-round design cannot add another breakpoint.
    #[error("design complete: widest gap is below the payoff quantum")]
    DesignComplete,
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
