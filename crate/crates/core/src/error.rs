use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures while decoding or validating a CVW weight container.
#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("not a CVW file (bad magic)")]
    BadMagic,
    #[error("unsupported CVW version {0} (expected 1)")]
    UnsupportedVersion(u32),
    #[error("corrupt container: {0}")]
    Corrupt(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("tensor `{name}` has shape {actual:?}, layer {layer} requires {expected:?}")]
    ShapeMismatch {
        name: String,
        layer: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{what} {index} out of range (valid: {valid})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        valid: String,
    },
    #[error("invalid architecture: {0}")]
    Arch(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("trace has no backward bookkeeping for layer {layer}; re-run forward with backward intent from layer {target} or earlier")]
    MissingBookkeeping { layer: usize, target: usize },
    #[error("image format: {0}")]
    ImageFormat(String),
    #[error("size limit exceeded: {0}")]
    SizeLimit(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
