use std::fmt;
use std::path::Path;

/// Location of a malformed-input diagnostic.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Location {
    Offset(u64),
    Cell { row: usize, column: String },
    Row(usize),
    File,
}

/// A data or model file that could not be decoded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FormatError {
    pub file: String,
    pub location: Location,
    pub message: String,
}

impl FormatError {
    pub fn at_offset(file: &str, offset: u64, message: impl Into<String>) -> Self {
        FormatError { file: file.to_string(), location: Location::Offset(offset), message: message.into() }
    }

    pub fn at_cell(file: &str, row: usize, column: &str, message: impl Into<String>) -> Self {
        FormatError { file: file.to_string(), location: Location::Cell { row, column: column.to_string() }, message: message.into() }
    }

    pub fn at_row(file: &str, row: usize, message: impl Into<String>) -> Self {
        FormatError { file: file.to_string(), location: Location::Row(row), message: message.into() }
    }

    pub fn in_file(file: &str, message: impl Into<String>) -> Self {
        FormatError { file: file.to_string(), location: Location::File, message: message.into() }
    }
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.location {
            Location::Offset(o) => write!(f, "{}: byte offset {o}: {}", self.file, self.message),
            Location::Cell { row, column } => write!(f, "{}: row {row}, column '{column}': {}", self.file, self.message),
            Location::Row(row) => write!(f, "{}: row {row}: {}", self.file, self.message),
            Location::File => write!(f, "{}: {}", self.file, self.message),
        }
    }
}

impl std::error::Error for FormatError {}

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("cannot read {path}: {detail}")]
    Input { path: String, detail: String },
    #[error("cannot write {path}: {detail}")]
    Output { path: String, detail: String },
    #[error("{0}")]
    Format(#[from] FormatError),
    /// Inputs that load fine but do not fit together, such as a model and a
    /// dataset of different shapes.
    #[error("contract: {0}")]
    Contract(String),
    #[error(transparent)]
    Core(#[from] gradcert_core::Error),
    #[error("{0}")]
    Runtime(String),
}

impl AppError {
    /// 2 for problems with what the user supplied, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) | AppError::Config(_) | AppError::Input { .. } | AppError::Format(_) | AppError::Contract(_) => 2,
            AppError::Output { .. } | AppError::Core(_) | AppError::Runtime(_) => 1,
        }
    }

    pub fn input(path: &Path, err: impl fmt::Display) -> Self {
        AppError::Input { path: path.display().to_string(), detail: err.to_string() }
    }

    pub fn output(path: &Path, err: impl fmt::Display) -> Self {
        AppError::Output { path: path.display().to_string(), detail: err.to_string() }
    }
}

pub type AppResult<T> = Result<T, AppError>;
