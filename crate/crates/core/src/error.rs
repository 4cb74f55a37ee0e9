use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A belief update or special-function evaluation lost numerical meaning.
    /// Callers abort the run rather than clamp.
    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    /// No selectable actions remain.
    #[error("action pool exhausted: no selectable actions remain")]
    Exhausted,

    /// A structural invariant would be violated (e.g. repeating a
    /// pair/worker cell that admits at most one comparison).
    #[error("constraint violation: {0}")]
    Constraint(String),

    /// The requested combination of policy and environment is not supported.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Bad experiment configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Replay pool loading or consumption failure.
    #[error("replay pool: {0}")]
    Replay(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
