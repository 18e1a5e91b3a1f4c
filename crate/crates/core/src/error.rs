use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Filter or model design parameters are out of range.
    #[error("design error: {0}")]
    Design(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Window statistics that are undefined for the given data (e.g. zero variance).
    #[error("degenerate window: {0}")]
    DegenerateWindow(String),

    /// Kernel PCA found fewer usable components than requested.
    #[error("rank deficiency: requested {requested} components, only {available} positive eigenvalues")]
    RankDeficient { requested: usize, available: usize },

    /// NaN/inf encountered during optimization.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A file did not match its declared binary or text layout.
    #[error("format error in {format}: {field}: {detail}")]
    Format {
        format: &'static str,
        field: String,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(format: &'static str, field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            format,
            field: field.into(),
            detail: detail.into(),
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::RankDeficient { .. })
    }

    pub fn is_format(&self) -> bool {
        matches!(self, Error::Format { .. } | Error::Json(_))
    }
}
