use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("invalid configuration field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("could not parse configuration: {0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("solver failure: {0}")]
    Solver(#[from] pnpf_core::Error),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("{0}")]
    Usage(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config { .. } | AppError::Parse(_) | AppError::Usage(_) => 1,
            AppError::Io { .. } | AppError::Solver(_) => 2,
            AppError::Invariant(_) => 3,
        }
    }

    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        AppError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}
