use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {dims:?}: {reason}")]
    InvalidShape {
        dims: Vec<usize>,
        reason: &'static str,
    },

    #[error("length mismatch: shape needs {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("coordinate {coord} out of bounds for axis {axis} (dim {dim})")]
    OutOfBounds {
        axis: usize,
        coord: usize,
        dim: usize,
    },

    #[error("coordinate rank {actual} does not match shape rank {expected}")]
    RankMismatch { expected: usize, actual: usize },

    #[error("invalid quantization parameters: {0}")]
    InvalidQuantParams(String),

    #[error("layer {layer}: {reason}")]
    IncompatibleLayer { layer: usize, reason: String },

    #[error("softmax must be the last layer (found at layer {layer})")]
    SoftmaxNotLast { layer: usize },

    #[error("input shape {actual:?} does not match expected {expected:?}")]
    InputShape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("calibration needs at least one sample")]
    NoCalibrationSamples,

    #[error("missing calibration statistics for site {site}")]
    MissingSiteStats { site: usize },

    #[error("layer {layer}: accumulator bound violated ({macs} MACs per output exceeds 65536)")]
    AccumulatorBound { layer: usize, macs: usize },

    #[error("layer {layer}: quantized bias {value} does not fit the 32-bit accumulator")]
    BiasOverflow { layer: usize, value: f64 },

    #[error("multiplier {0} outside (2^-31, 2^31)")]
    MultiplierRange(f64),

    #[error("quantization parameters mismatch: {0}")]
    QParamsMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic {found:?}")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("{path}: unsupported version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("{path}: CRC mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    CrcMismatch {
        path: PathBuf,
        stored: u32,
        computed: u32,
    },

    #[error("{path}: truncated payload")]
    Truncated { path: PathBuf },

    #[error("{path}: malformed content: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("{path}: unsupported image format: {reason}")]
    UnsupportedImage { path: PathBuf, reason: String },

    #[error("{path}: {reason}")]
    Labels { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("model does not end in softmax")]
    NoSoftmax,

    #[error("positive label {0:?} is not one of the model's class labels")]
    UnknownPositiveLabel(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
