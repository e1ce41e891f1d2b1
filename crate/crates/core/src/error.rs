use thiserror::Error;

pub type Result<T> = std::result::Result<T, QcError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QcError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("degenerate: {0}")]
    Degenerate(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("truncation: {0}")]
    Truncation(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("design error: {0}")]
    Design(String),
    #[error("initialization failed: {0}")]
    Init(String),
    #[error("models are not nested: {0}")]
    Nesting(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for QcError {
    fn from(e: std::io::Error) -> Self {
        QcError::Io(e.to_string())
    }
}

impl From<csv::Error> for QcError {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        QcError::Parse {
            line,
            msg: e.to_string(),
        }
    }
}
