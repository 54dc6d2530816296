use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("degenerate extent")]
    DegenerateExtent,

    #[error("k exceeds cloud size (k = {k}, n = {n})")]
    KExceedsCloudSize { k: usize, n: usize },

    #[error("invalid sample count {count} for a cloud of {n} points")]
    InvalidSampleCount { count: usize, n: usize },

    #[error("rotation is not orthonormal (deviation {deviation:e})")]
    NonOrthonormal { deviation: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid config: {field}: {message}")]
    Config { field: String, message: String },

    #[error("insufficient coverage: {have} denoised points for {need} outputs")]
    InsufficientCoverage { have: usize, need: usize },

    #[error("degenerate triangle")]
    DegenerateTriangle,

    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("invalid weight file: {0}")]
    WeightFile(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Configuration errors map to exit code 2 on the command line.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}
