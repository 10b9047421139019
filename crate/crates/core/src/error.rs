use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Input is well formed but carries no usable signal (empty graph, no runs left, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True when the failure is caused by bad user input (including a missing
    /// input file) rather than by the environment or a numerical breakdown.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Dimension(_)
            | Error::Invalid(_)
            | Error::Parse { .. }
            | Error::Degenerate(_)
            | Error::Json(_)
            | Error::Toml(_)
            | Error::Csv(_) => true,
            Error::Stage { source, .. } => source.is_validation(),
            Error::Io(e) => e.kind() == std::io::ErrorKind::NotFound,
            Error::Optimization(_) => false,
        }
    }
}
