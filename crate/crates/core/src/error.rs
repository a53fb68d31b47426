use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid wav: {0}")]
    InvalidWav(String),
    #[error("unsupported wav encoding: format {format}, {bits} bits (16-bit PCM required)")]
    NonPcm { format: u16, bits: u16 },
    #[error("empty audio")]
    EmptyAudio,
    #[error("sample rate mismatch: expected {expected} Hz, got {actual} Hz")]
    SampleRateMismatch { expected: u32, actual: u32 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("stale cache: {0}")]
    StaleCache(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("zero-norm vector in {0}")]
    ZeroNorm(String),

    #[error("config error: {0}")]
    Config(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: u64, loss: f64 },
    #[error("unknown utterance id: {0}")]
    UnknownId(String),
    #[error("{0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Stable kebab-case tag for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MissingFile(_) => "missing-file",
            Error::Io { .. } => "io",
            Error::InvalidWav(_) => "invalid-wav",
            Error::NonPcm { .. } => "non-pcm",
            Error::EmptyAudio => "empty-audio",
            Error::SampleRateMismatch { .. } => "sample-rate-mismatch",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::NonFinite(_) => "non-finite",
            Error::StaleCache(_) => "stale-cache",
            Error::LabelOutOfRange { .. } => "label-out-of-range",
            Error::ZeroNorm(_) => "zero-norm",
            Error::Config(_) => "config",
            Error::ConfigMismatch(_) => "config-mismatch",
            Error::Checkpoint(_) => "checkpoint",
            Error::Manifest(_) => "manifest",
            Error::Diverged { .. } => "diverged",
            Error::UnknownId(_) => "unknown-id",
            Error::Parse(_) => "parse",
        }
    }
}
