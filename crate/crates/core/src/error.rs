use thiserror::Error;

/// Errors raised by the inference library and its file front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("event {0} has no reports")]
    EventWithoutReports(usize),

    #[error("{path}:{line}: {msg}")]
    Schema {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("mask generation failed: some event had no observer after {0} attempts")]
    MaskRetriesExhausted(usize),

    #[error("run {run} failed: {source}")]
    Run {
        run: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad user input (CLI exit code 1); everything
    /// else is a runtime failure (exit code 2).
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Domain(_)
            | Error::Dimension(_)
            | Error::Invalid(_)
            | Error::EventWithoutReports(_)
            | Error::Schema { .. }
            | Error::NotPositiveDefinite
            | Error::Csv(_)
            | Error::Json(_) => true,
            Error::Run { source, .. } => source.is_validation(),
            Error::MaskRetriesExhausted(_) | Error::Io { .. } => false,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
