use std::path::PathBuf;

use diff2ct_core::Error as CoreError;

/// Problems with the content of a DVOL1/DIMG1/DCKP1 file.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: &'static str, found: String },
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("unsupported dtype {0:?} (only \"f32le\")")]
    BadDtype(String),
    #[error("payload mismatch: header implies {expected} bytes, file has {found}")]
    PayloadMismatch { expected: usize, found: usize },
    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },
    #[error("array `{name}`: offset {found} where {expected} was expected")]
    OffsetMismatch { name: String, expected: usize, found: usize },
    #[error("array `{name}`: shape {shape:?} needs {expected} bytes, index says {found}")]
    ShapeMismatch { name: String, shape: Vec<usize>, expected: usize, found: usize },
    #[error("{0}")]
    Content(#[from] CoreError),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: CoreError,
    },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("missing reconstructions for {}", .0.join(", "))]
    MissingReconstructions(Vec<String>),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub fn format(path: impl Into<PathBuf>) -> impl FnOnce(FormatError) -> Error {
        let path = path.into();
        move |source| Error::Format { path, source }
    }

    pub fn json(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Error {
        let path = path.into();
        move |source| Error::Json { path, source }
    }

    pub fn csv(path: impl Into<PathBuf>) -> impl FnOnce(csv::Error) -> Error {
        let path = path.into();
        move |source| Error::Csv { path, source }
    }

    pub fn core(context: impl Into<String>) -> impl FnOnce(CoreError) -> Error {
        let context = context.into();
        move |source| Error::Core { context, source }
    }

    /// 1 usage, 2 data or format, 3 numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Usage(_) => 1,
            Error::Core { source: CoreError::NonFinite { .. }, .. } => 3,
            _ => 2,
        }
    }
}
