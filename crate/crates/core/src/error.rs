use diffcore::DiffError;
use std::path::PathBuf;

pub type Result<T, E = TrackError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum TrackError {
    /// No points left after cropping; the tracker carries the previous state
    /// forward when it sees this.
    #[error("empty region: {0}")]
    EmptyRegion(&'static str),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: byte {offset}: {detail}")]
    Format {
        path: PathBuf,
        offset: u64,
        detail: String,
    },

    #[error("{path}:{line}: {detail}")]
    Manifest {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("no usable training samples")]
    NoSamples,

    #[error(transparent)]
    Diff(#[from] DiffError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TrackError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TrackError::Io {
            path: path.into(),
            source,
        }
    }
}
