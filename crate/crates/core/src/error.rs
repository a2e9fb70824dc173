use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// An attachment function was evaluated past the indices it can represent.
    #[error("index {index} out of range (maximum supported index is {max})")]
    OutOfRange { index: u64, max: u64 },
    #[error("internal consistency violated: {0}")]
    Internal(String),
    #[error("table file: {0}")]
    Table(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
