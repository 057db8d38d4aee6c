use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// A solver produced a non-finite value. `s_node` is set for two-time fields.
    #[error("numeric overflow at t-node {t_node}{}", .s_node.map(|s| format!(", s-node {s}")).unwrap_or_default())]
    NumericOverflow { t_node: usize, s_node: Option<usize> },

    #[error("calibration failure: {0}")]
    CalibrationFailure(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("invalid config:\n  {}", .0.join("\n  "))]
    ConfigInvalid(Vec<String>),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
