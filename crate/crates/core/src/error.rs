use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error classes, used by the CLI for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerical,
    Internal,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Data => "data",
            ErrorCategory::Numerical => "numerical",
            ErrorCategory::Internal => "internal",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::Numerical => 4,
            ErrorCategory::Internal => 5,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {what}: requested {requested}, available {available}")]
    Dimension {
        what: &'static str,
        requested: usize,
        available: usize,
    },

    #[error("insufficient data: {what} needs {required} rows, {available} available")]
    InsufficientData {
        what: &'static str,
        required: usize,
        available: usize,
    },

    #[error("unknown asset `{0}`")]
    UnknownAsset(String),

    #[error("unknown time step {0}")]
    UnknownTime(usize),

    #[error("non-anticipation violated: basis built at step {basis_time} used at step {used_at}")]
    NonAnticipation { basis_time: usize, used_at: usize },

    #[error("alignment degenerate: overlap matrix has smallest singular value {min_singular:e}")]
    AlignmentDegenerate { min_singular: f64 },

    #[error("invalid spectrum: eigenvalue {value:e} is negative beyond tolerance")]
    InvalidSpectrum { value: f64 },

    #[error("nonlinear iteration did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("misaligned inputs: {0}")]
    Misaligned(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("rejected input:\n  - {}", .0.join("\n  - "))]
    Rejected(Vec<String>),

    #[error("cannot read {path}: {source}")]
    Input {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wraps a failed read of a user-supplied file.
    pub fn input(path: impl AsRef<std::path::Path>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.as_ref().display().to_string();
        move |source| Error::Input { path, source }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Dimension { .. } | Error::UnknownAsset(_) => {
                ErrorCategory::Config
            }
            Error::InsufficientData { .. }
            | Error::UnknownTime(_)
            | Error::InvalidPanel(_)
            | Error::Misaligned(_)
            | Error::Precondition(_)
            | Error::Parse { .. }
            | Error::Rejected(_)
            | Error::Input { .. }
            | Error::Csv(_) => ErrorCategory::Data,
            Error::AlignmentDegenerate { .. }
            | Error::InvalidSpectrum { .. }
            | Error::Convergence { .. }
            | Error::Domain(_) => ErrorCategory::Numerical,
            Error::NonAnticipation { .. } | Error::Io(_) | Error::Json(_) => {
                ErrorCategory::Internal
            }
        }
    }
}
