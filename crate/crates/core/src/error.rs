use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wav decode failed: {0}")]
    Wav(#[from] hound::Error),
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("sample-rate mismatch: file is {found} Hz, configured rate is {expected} Hz")]
    SampleRateMismatch { found: u32, expected: u32 },
    #[error("clip too short: {samples} samples, need at least {required}")]
    ClipTooShort { samples: usize, required: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("timestep {t} out of range [{min}, {max}]")]
    TimestepOutOfRange { t: usize, min: usize, max: usize },
    #[error("sigma {sigma} too large: sigma^2 exceeds 1 - alpha_bar[{t_prev}] = {limit}")]
    InvalidSigma { sigma: f64, t_prev: usize, limit: f64 },
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: u64, loss: f64 },
    #[error("backward called without a recorded forward pass")]
    NoForwardPass,
    #[error("empty input: {0}")]
    Empty(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
