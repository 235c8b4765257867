use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller passed arguments that violate an operation's preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    /// A configuration failed validation; the message names the failing field or inequality.
    #[error("configuration error: {0}")]
    Config(String),

    /// A numerical routine failed (non-finite values, non-convergence).
    #[error("numerical failure{}: {message}", iteration.map(|t| format!(" at iteration {t}")).unwrap_or_default())]
    Numerical {
        message: String,
        iteration: Option<usize>,
        point: Option<Vec<f64>>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn numerical(message: impl Into<String>) -> Self {
        Error::Numerical {
            message: message.into(),
            iteration: None,
            point: None,
        }
    }

    /// Attaches iteration context to a numerical failure; other variants pass through.
    pub fn at_iteration(self, t: usize, x: &[f64]) -> Self {
        match self {
            Error::Numerical { message, .. } => Error::Numerical {
                message,
                iteration: Some(t),
                point: Some(x.to_vec()),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
