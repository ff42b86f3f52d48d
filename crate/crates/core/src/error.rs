use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file content. `position` is a human readable location such
    /// as `line 12` or `byte 4096`.
    #[error("{path}: parse error at {position}: {message}")]
    Parse {
        path: PathBuf,
        position: String,
        message: String,
    },

    #[error("not a rigid transform: {0}")]
    NotRigid(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("region contains no points")]
    EmptyRegion,

    #[error("descriptor set has no present records")]
    EmptyDescriptorSet,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid report: {0}")]
    InvalidReport(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(
        path: impl Into<PathBuf>,
        position: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            path: path.into(),
            position: position.into(),
            message: message.into(),
        }
    }

    /// True for failures caused by file content or file access rather than
    /// by the numerical content of otherwise valid inputs.
    pub fn is_format_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Parse { .. } | Error::NotRigid(_) | Error::InvalidScene(_)
        )
    }
}
