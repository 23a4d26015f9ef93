use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("expansion center {center} is too close to the singularity at 1")]
    Singularity { center: f64 },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("resource limit: {what} needs {required_bytes} bytes (limit {limit_bytes})")]
    Resource {
        what: String,
        required_bytes: u128,
        limit_bytes: u128,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("training diverged at iteration {iteration} (loss {loss:e}); try a smaller learning rate")]
    Divergence { iteration: usize, loss: f64 },
    #[error("overflow: {0}")]
    Overflow(String),
    #[error("config error in `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 2 for configuration problems, 3 for numeric or resource failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Parse { .. } | Error::Argument(_) | Error::Io(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
