use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid class partition: {0}")]
    Partition(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("input is not unit-normalized (norm = {norm})")]
    NotNormalized { norm: f64 },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite gradient entry at index {0}")]
    NonFiniteGradient(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {field}: {message}")]
    Config { field: String, message: String },

    #[error("missing evaluation for task {task} after task {after}")]
    MissingEvaluation { after: usize, task: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by a bad configuration rather than a failure at runtime.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}
