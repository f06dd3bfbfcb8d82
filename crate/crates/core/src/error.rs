use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("invalid configuration at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("empty subset: {0}")]
    EmptySubset(String),

    #[error("malformed artifact {file}: {msg}")]
    Parse { file: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status: 2 configuration, 3 missing artifact, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingArtifact(_) | Error::Parse { .. } | Error::Io(_) => 3,
            Error::Numerical(_) => 4,
            Error::Grid(_) | Error::Config { .. } | Error::Dimension(_) | Error::OutOfRange(_) | Error::EmptySubset(_) | Error::Json(_) => 2,
        }
    }

    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
