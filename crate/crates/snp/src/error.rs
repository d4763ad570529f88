use thiserror::Error;

#[derive(Debug, Error)]
pub enum SnpError {
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SnpError {
    pub(crate) fn parse(file: &str, line: usize, msg: impl Into<String>) -> Self {
        SnpError::Parse {
            file: file.to_string(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, SnpError>;
