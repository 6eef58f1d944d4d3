use thiserror::Error;

/// Crate-wide error type. The CLI maps variants onto its exit-code contract:
/// 2 for input/validation problems, 3 for estimation failures, 4 for I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}: missing required column `{column}`")]
    MissingColumn { file: String, column: String },

    #[error("{file} line {line}: {msg}")]
    Malformed { file: String, line: u64, msg: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("{context}: design matrix is rank deficient; collinear columns: {columns:?}")]
    RankDeficient {
        context: String,
        columns: Vec<String>,
    },

    #[error("nonlinear fit did not converge: {0}")]
    NoConvergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 0 is success, 2 invalid input,
    /// 3 estimation failure, 4 I/O failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingColumn { .. }
            | Error::Malformed { .. }
            | Error::Invalid(_)
            | Error::Config(_) => 2,
            Error::Estimation(_) | Error::RankDeficient { .. } | Error::NoConvergence(_) => 3,
            Error::Io { .. } => 4,
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
