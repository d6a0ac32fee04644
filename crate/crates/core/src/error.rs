use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure modes when resolving pretrained backbone weights.
#[derive(Debug, thiserror::Error)]
pub enum WeightsError {
    #[error("weights file {0} not found (set PIPELINE_CACHE_DIR or provide weights_path)")]
    Missing(PathBuf),
    #[error("network failure fetching weights from {url}: {reason}")]
    Network { url: String, reason: String },
    #[error("checksum mismatch for {path}: expected {expected}, got {actual}")]
    Checksum {
        path: PathBuf,
        expected: String,
        actual: String,
    },
    #[error("weights file {path} is unusable: {reason}")]
    Format { path: PathBuf, reason: String },
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("no images found under {0}")]
    EmptyDataset(PathBuf),
    #[error("failed to decode image {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("unknown backbone: {0}")]
    Registry(String),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("model assembly failed: {0}")]
    Assembly(String),
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("not found: {0}")]
    NotFound(PathBuf),
    #[error("ROC-AUC is undefined when only one class is present")]
    UndefinedAuc,
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 2 for usage/config/input problems, 3 for
    /// runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_)
            | Error::EmptyDataset(_)
            | Error::Config { .. }
            | Error::Registry(_)
            | Error::NotFound(_)
            | Error::Incompatible(_)
            | Error::Format { .. } => 2,
            _ => 3,
        }
    }
}
