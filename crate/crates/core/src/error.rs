use thiserror::Error;

/// Crate-wide error type. Variants group by who has to fix the problem:
/// `Config` (caller-supplied settings), `Data` (input files / dataset shape),
/// `Numeric` (training diverged), `WeightMismatch` (weight file disagrees
/// with the config it is loaded into), `Shape` (an op was called with
/// incompatible operands).
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("weight mismatch: {0}")]
    WeightMismatch(String),

    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    /// Process exit code for CLI reporting.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape { .. } => 1,
            Error::Data(_) | Error::Io(_) => 2,
            Error::Numeric(_) => 3,
            Error::WeightMismatch(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
