use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// `Validation` covers malformed inputs (bad CSV rows, schema violations,
/// invalid configs); `Runtime` covers failures that happen while computing
/// (sampler blow-ups, I/O on outputs). The CLI maps them to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row}, field `{field}`: {message}")]
    MalformedRow {
        row: usize,
        field: String,
        message: String,
    },
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("unknown column `{0}` is not declared in the schema")]
    UnknownColumn(String),
    #[error("nesting violation: {0}")]
    Nesting(String),
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("distribution has zero {0}")]
    ZeroStatistic(&'static str),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("sampler failure: {0}")]
    Sampler(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad inputs rather than failures during computation.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Sampler(_) | Error::Io(_) | Error::NonFinite(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
