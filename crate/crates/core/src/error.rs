use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid m-sequence spec: {0}")]
    InvalidSequenceSpec(String),

    #[error("feedback polynomial is not primitive: observed period {observed}, expected {expected}")]
    NotPrimitive { observed: usize, expected: usize },

    #[error("empty sequence")]
    EmptySequence,

    #[error("line {k} magnitude {magnitude:e} is below the floor {floor:e}")]
    LineBelowFloor { k: i64, magnitude: f64, floor: f64 },

    #[error("invalid line count: 2N = {lines} with sequence length {period}")]
    InvalidLineCount { lines: usize, period: usize },

    #[error("transmitter index {n} outside [1, {p}]")]
    TransmitterIndex { n: usize, p: usize },

    #[error("sampling below band: f_e = {sample_rate} Hz < B = {band} Hz")]
    SamplingBelowBand { sample_rate: f64, band: f64 },

    #[error("sample rate {sample_rate} Hz is not a multiple of 1/(pT) = {spacing} Hz")]
    SampleRateOffGrid { sample_rate: f64, spacing: f64 },

    #[error("span {span} s is not an integer number of samples at {sample_rate} Hz")]
    SpanOffGrid { span: f64, sample_rate: f64 },

    #[error("signal mismatch: {0}")]
    SignalMismatch(String),

    #[error("tap delay {delay} s outside [0, T = {period}) s")]
    DelayOutOfRange { delay: f64, period: f64 },

    #[error("invalid tap profile: {0}")]
    InvalidProfile(String),

    #[error("zero-power signal cannot carry noise at finite SNR")]
    ZeroPowerSignal,

    #[error("record length {actual} does not match the expected {expected} samples")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("estimate for channel {0} is already ramp-corrected")]
    AlreadyCorrected(usize),

    #[error("config fingerprint mismatch: record {record}, config {config}")]
    FingerprintMismatch { record: String, config: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("scenario failed at point {index}: {source}")]
    Point {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidSequenceSpec(_) => "invalid_sequence_spec",
            Error::NotPrimitive { .. } => "not_primitive",
            Error::EmptySequence => "empty_sequence",
            Error::LineBelowFloor { .. } => "line_below_floor",
            Error::InvalidLineCount { .. } => "invalid_line_count",
            Error::TransmitterIndex { .. } => "transmitter_index",
            Error::SamplingBelowBand { .. } => "sampling_below_band",
            Error::SampleRateOffGrid { .. } => "sample_rate_off_grid",
            Error::SpanOffGrid { .. } => "span_off_grid",
            Error::SignalMismatch(_) => "signal_mismatch",
            Error::DelayOutOfRange { .. } => "delay_out_of_range",
            Error::InvalidProfile(_) => "invalid_profile",
            Error::ZeroPowerSignal => "zero_power_signal",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::AlreadyCorrected(_) => "already_corrected",
            Error::FingerprintMismatch { .. } => "fingerprint_mismatch",
            Error::InvalidConfig(_) => "invalid_config",
            Error::UnknownPreset(_) => "unknown_preset",
            Error::Point { .. } => "scenario_point",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
