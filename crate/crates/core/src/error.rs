use thiserror::Error;

use crate::dsl::DslError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("CSV parse error at row {row}: {message}")]
    Parse { row: u64, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("cannot aggregate text cells in column `{column}` with {aggregate}")]
    TypeMismatch { column: String, aggregate: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("expected {expected} name(s), got {got}")]
    NameArity { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{feature} is not supported in the {dialect} dialect")]
    UnsupportedInDialect { feature: String, dialect: String },

    #[error("bootstrap nested under another bootstrap cannot be compiled to SQL")]
    NestedBootstrap,

    #[error(transparent)]
    Dsl(#[from] DslError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    /// Errors caused by the caller's input rather than a defect in this crate.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Internal(_))
    }
}
