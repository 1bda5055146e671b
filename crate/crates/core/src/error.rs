use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("tensor does not belong to the active graph")]
    NoGraph,

    #[error("invalid attention scale {0}: must be > 0")]
    InvalidScale(f64),

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("invalid groundtruth: {0}")]
    InvalidGroundtruth(String),

    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),

    #[error("{path}: parse error at byte {offset}: {msg}")]
    Parse { path: PathBuf, offset: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::InvalidShape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
