//! On-disk formats, sequence replay, exports and the benchmark harness.

pub mod bench;
pub mod export;
pub mod replay;
pub mod sequence;
pub mod synth;
pub mod tensor;

use thiserror::Error;

use crate::error::EsmError;
use crate::scene::SceneError;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed tensor header: {reason}")]
    BadHeader { path: String, reason: String },

    #[error("{path}: payload holds {found} bytes, header implies {expected}")]
    PayloadLength {
        path: String,
        expected: usize,
        found: usize,
    },

    #[error("missing frame {index}: {path} does not exist")]
    MissingFrame { index: u64, path: String },

    #[error("{what}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        what: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("trajectory line {line}: index {index} does not follow {previous}")]
    NonMonotonic {
        line: usize,
        previous: String,
        index: String,
    },

    #[error("trajectory line {line}: {reason}")]
    Trajectory { line: usize, reason: String },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error(transparent)]
    Esm(#[from] EsmError),

    #[error(transparent)]
    Scene(#[from] SceneError),

    #[error("image export failed: {0}")]
    Image(String),
}

impl IoError {
    /// True when the failure stems from bad user input rather than a
    /// runtime fault.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, IoError::Image(_))
            && !matches!(self, IoError::Io { source, .. } if source.kind() != std::io::ErrorKind::NotFound)
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
