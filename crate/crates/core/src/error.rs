use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("size mismatch: {0}")]
    Size(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("graph has no vertices")]
    EmptyGraph,

    #[error("base graph has no vertices; affine centering is undefined")]
    DegenerateBase,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("{context}ODE solver exceeded {max_steps} steps (stiff dynamics?) at t = {t}")]
    Stiffness {
        max_steps: usize,
        t: f64,
        context: String,
    },

    #[error("dimension {dim} exceeds the exact-divergence cap of {cap}")]
    Capacity { dim: usize, cap: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("verification failed: {0}")]
    Verification(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps a numeric or solver failure with additional context (epoch, step, complex index).
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::Numeric(m) => Error::Numeric(format!("{ctx}: {m}")),
            Error::Stiffness {
                max_steps,
                t,
                context,
            } => Error::Stiffness {
                max_steps,
                t,
                context: format!("{ctx}: {context}"),
            },
            other => other,
        }
    }

    /// True for errors that come from the numerics (non-finite values, solver failure).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numeric(_) | Error::Stiffness { .. } | Error::Capacity { .. }
        )
    }
}
