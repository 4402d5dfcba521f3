use sleepssl_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("truncated data section")]
    TruncatedData,
    #[error("truncated header")]
    TruncatedHeader,
    #[error("unknown channel label `{0}`")]
    UnknownChannel(String),
    #[error("invalid header field `{field}`: {value:?}")]
    HeaderField { field: &'static str, value: String },
    #[error("signal `{0}` has digital_min == digital_max")]
    DegenerateCalibration(String),
    #[error("malformed annotation: {0}")]
    MalformedAnnotation(String),
    #[error("unknown stage label `{0}`")]
    UnknownStage(String),
    #[error("sample rate {0} Hz is not 100 Hz (resampling is not supported)")]
    SampleRate(f64),
    #[error("hypnogram covers {intervals_s} s but the recording lasts {recording_s} s")]
    CoverageMismatch { intervals_s: f64, recording_s: f64 },
    #[error("insufficient subjects: {needed} requested, {available} available")]
    InsufficientSubjects { needed: usize, available: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("file format: {0}")]
    Format(String),
    #[error("no recording pairs found")]
    NoRecordingPairs,
    #[error("no recording pair could be ingested: {0}")]
    NoPairIngested(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
