//! Error type shared across the crate.

/// Errors produced by model construction, training, verification and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes are inconsistent for the requested operation.
    #[error("shape mismatch in {op}: {details}")]
    Shape { op: &'static str, details: String },

    /// Invalid value-level input (non-finite entries, simplex violations, bad spec fields).
    #[error("invalid input: {0}")]
    Input(String),

    /// Malformed text input; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Training blew up. The message mirrors the usual fix: lower the learning rate.
    #[error("divergence at iteration {iter}: risk = {risk:e}; try lowering lr")]
    Divergence { iter: usize, risk: f64 },

    /// A hard size guard was exceeded.
    #[error("resource guard exceeded: {0}")]
    Resource(String),

    /// A documented precondition of the operation does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, details: impl Into<String>) -> Self {
        Error::Shape {
            op,
            details: details.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
