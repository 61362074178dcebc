use thiserror::Error;

/// Errors produced by the simulator and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("degenerate problem: {0}")]
    DegenerateProblem(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("infinite privacy spend: {0}")]
    InfiniteSpend(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("unknown algorithm tag `{0}`")]
    UnknownAlgorithm(String),

    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
