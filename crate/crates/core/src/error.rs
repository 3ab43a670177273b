use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("non-finite value produced by {what}")]
    NonFinite { what: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {kind}")]
    Format { path: PathBuf, kind: FormatError },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Problems decoding one of the binary file formats.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated")]
    Truncated,
    #[error("checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),
    #[error("declared extents {extents:?} disagree with payload of {payload_bytes} bytes")]
    PayloadLength {
        extents: Vec<u64>,
        payload_bytes: usize,
    },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("{0} trailing bytes after last entry")]
    TrailingBytes(usize),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, kind: FormatError) -> Self {
        Error::Format {
            path: path.into(),
            kind,
        }
    }

    /// Stable machine-readable code used by the command-line front end.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "E_SHAPE",
            Error::InvalidArgument { .. } => "E_ARG",
            Error::NonFinite { .. } => "E_NONFINITE",
            Error::Config(_) => "E_CONFIG",
            Error::Data(_) => "E_DATA",
            Error::Format { .. } => "E_FORMAT",
            Error::Io { .. } => "E_IO",
            Error::Json { .. } => "E_JSON",
            Error::Csv(_) => "E_CSV",
        }
    }

    /// Prefixes the location of a failure (layer path, tensor name) onto
    /// shape and non-finite errors.
    pub fn context(self, scope: &str) -> Self {
        match self {
            Error::NonFinite { what } => Error::NonFinite {
                what: format!("{scope}/{what}"),
            },
            Error::Shape { op, detail } => Error::Shape {
                op,
                detail: format!("{scope}: {detail}"),
            },
            other => other,
        }
    }
}
