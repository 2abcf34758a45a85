use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {dim} expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("non-finite loss `{term}` at epoch {epoch}, step {step}: {value}")]
    NonFinite {
        term: String,
        epoch: usize,
        step: usize,
        value: f64,
    },

    #[error("bad magic bytes in {0}")]
    BadMagic(String),

    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("volume has no positive intensity inside the brain mask")]
    DegenerateVolume,

    #[error("no slices survived the brain-coverage filter")]
    EmptyAfterFilter,

    #[error("unknown label value {0}")]
    UnknownLabel(f64),

    #[error("unknown domain `{0}`")]
    UnknownDomain(String),

    #[error("unknown translation mode `{0}`")]
    UnknownMode(String),

    #[error("policy violation: {0}")]
    PolicyViolation(String),

    #[error("generator `{found}` was not trained in {expected} mode")]
    ModeMismatch { expected: String, found: String },

    #[error("record `{0}` has no label")]
    Unlabeled(String),

    #[error("metric `{0}` is undefined for these inputs")]
    Undefined(&'static str),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("malformed record at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("config error at `{location}`: {msg}")]
    Config { location: String, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn config(location: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            location: location.into(),
            msg: msg.into(),
        }
    }
}
