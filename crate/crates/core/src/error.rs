use thiserror::Error;

/// Errors raised by the memory engine itself (geometry, state, fusion).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EsmError {
    #[error("degenerate point at origin")]
    DegeneratePoint,

    #[error("non-uniform angular resolution: width {width} must equal 2 x height {height}")]
    NonUniformResolution { height: usize, width: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("shape mismatch for {what}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("feature channel mismatch: state has {expected}, frame has {found}")]
    ChannelMismatch { expected: usize, found: usize },

    #[error("invalid frame: {0}")]
    InvalidFrame(String),
}

pub type Result<T, E = EsmError> = std::result::Result<T, E>;
