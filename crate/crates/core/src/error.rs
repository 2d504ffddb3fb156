use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad user input: unknown lattice, missing barrier, malformed stencil.
    #[error("configuration error: {0}")]
    Config(String),

    /// A precondition of an operation does not hold for the given arguments.
    #[error("domain error: {0}")]
    Domain(String),

    /// A site was addressed outside the lattice extent. Under auto-sizing this
    /// is unreachable; hitting it means the extent was computed too small.
    #[error("bounds error: {0}")]
    Bounds(String),

    /// The request is well-formed but too expensive for the chosen engine.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// `<cos θ> = 1` makes the correlation factor diverge.
    #[error("correlation factor diverges at <cos θ> = 1")]
    Divergent,

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
