use thiserror::Error;

/// Failure modes shared by every module of the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("compile error in check '{check}': {message}")]
    Compile { check: String, message: String },
    #[error("accuracy error: {0}")]
    Accuracy(String),
    #[error("singularity: {0}")]
    Singularity(String),
    #[error("patch-domain error: {0}")]
    PatchDomain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical divergence: {0}")]
    Divergence(String),
    #[error("fit degenerate: {0}")]
    FitDegenerate(String),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn compile(check: &str, message: impl Into<String>) -> Self {
        Error::Compile { check: check.to_string(), message: message.into() }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Format(format!("i/o: {e}"))
    }
}
