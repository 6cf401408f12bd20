use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error(
        "non-finite loss at step {step} (epoch {epoch}): total={total}, recon={recon}, \
         dispersion={dispersion}, kl={kl}"
    )]
    NonFiniteLoss {
        step: u64,
        epoch: u64,
        total: f64,
        recon: f64,
        dispersion: f64,
        kl: f64,
    },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Checkpoint load failures. Each corruption mode has its own variant.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CheckpointError {
    #[error("bad magic: expected \"ENVAECKP\"")]
    BadMagic,
    #[error("version mismatch: file has version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated checkpoint: needed {needed} bytes, file has {available}")]
    Truncated { needed: u64, available: u64 },
    #[error("malformed checkpoint header: {0}")]
    Header(String),
}

/// IDX (MNIST-format) parse failures.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum IdxError {
    #[error("wrong magic number: expected {expected:#010x}, found {found:#010x}")]
    WrongMagic { expected: u32, found: u32 },
    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: u32, labels: u32 },
    #[error("truncated IDX file: needed {needed} bytes, file has {available}")]
    Truncated { needed: u64, available: u64 },
    #[error("zero-sized image dimensions")]
    EmptyDimensions,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
