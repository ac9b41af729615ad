//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Pushing force requested between coincident points.
    #[error("coincident points: |p_i - p_c| = {distance} < 1e-9")]
    CoincidentPoints { distance: f64 },

    /// More than half of the mesh vertices penetrated the object.
    #[error("degenerate contact: {contacts} of {vertices} vertices in contact")]
    DegenerateContact { contacts: usize, vertices: usize },

    /// Integration produced a non-finite position or velocity.
    #[error("numerical instability at step {step}")]
    NumericalInstability { step: usize },

    /// A tap never reached the object inside the search bracket.
    #[error("sensor cannot touch the object: no contact within {bracket} mm of travel")]
    NoTouch { bracket: f64 },

    /// Pin-frame normalisation divisor collapsed.
    #[error("degenerate frame: normalisation divisor {divisor} < 1e-12")]
    DegenerateFrame { divisor: f64 },

    /// Vector or frame length does not match the expected schema.
    #[error("{context}: expected length {expected}, got {actual}")]
    LengthMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Representation kind or label schema does not match the operation.
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    /// Training loss blew up.
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },

    /// A network layer produced non-finite activations.
    #[error("non-finite activations in layer {layer}")]
    NonFiniteActivations { layer: usize },

    /// Invalid argument or configuration value.
    #[error("invalid config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 usage/config, 3 numerical, 1 other failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Io { .. } => 2,
            Error::CoincidentPoints { .. }
            | Error::NumericalInstability { .. }
            | Error::Divergence { .. }
            | Error::NonFiniteActivations { .. } => 3,
            _ => 1,
        }
    }
}
