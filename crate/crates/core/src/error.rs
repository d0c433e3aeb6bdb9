use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("empty waveform")]
    EmptyWaveform,
    #[error("waveform contains a non-finite sample at index {0}")]
    NonFiniteSample(usize),
    #[error("waveform of {len} samples is too short for a {window_len}-sample window with reflect padding")]
    TooShort { len: usize, window_len: usize },
    #[error("invalid STFT configuration: {0}")]
    InvalidStft(String),
    #[error("zero overlap-add normalization at sample {0}")]
    ZeroNormalization(usize),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("invalid mel configuration: {0}")]
    InvalidMelConfig(String),
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),
    #[error("zero-energy {0} signal")]
    ZeroEnergy(&'static str),
    #[error("no usable inputs in {0}")]
    NoInputs(PathBuf),
    #[error("non-finite activation in layer {0}")]
    NonFiniteActivation(String),
    #[error("non-finite loss term: {0}")]
    NonFiniteLoss(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("cache does not match parameters: {0}")]
    CacheMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("I/O error on {path}: {cause}")]
    Io {
        path: PathBuf,
        cause: std::io::Error,
    },
    #[error("JSON encoding or decoding failed")]
    Json(#[from] serde_json::Error),
    #[error("CSV encoding or decoding failed")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, cause: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause,
        }
    }
}
