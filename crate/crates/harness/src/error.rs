use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Codec(#[from] sit_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("not a SIT container: {0}")]
    Container(String),

    #[error("unsupported container version {0}")]
    Version(u16),

    #[error("CRC mismatch in record for frame {index}")]
    RecordCrc { index: u32 },

    #[error("CRC mismatch in container {0}")]
    StreamCrc(&'static str),

    #[error("unsupported input: {0}")]
    Input(String),

    #[error("experiment: {0}")]
    Experiment(String),

    #[error("rate curve: {0}")]
    Curve(String),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
