//! Error types for every stage of the pipeline.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("invalid band {low_hz}..{high_hz} Hz for sample rate {sample_rate_hz} Hz")]
    InvalidBand {
        low_hz: f64,
        high_hz: f64,
        sample_rate_hz: f64,
    },
    #[error("notch center {center_hz} Hz is not below Nyquist for {sample_rate_hz} Hz")]
    InvalidCenter { center_hz: f64, sample_rate_hz: f64 },
    #[error("signal too short: need {needed} samples, got {got}")]
    TooShortSignal { needed: usize, got: usize },
    #[error("filter design is unstable (pole magnitude {pole_magnitude})")]
    UnstableDesign { pole_magnitude: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("series too short: need {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("zero variance")]
    ZeroVariance,
    #[error("degenerate signal (zero extent or zero path length)")]
    DegenerateSignal,
    #[error("singular fit: fluctuation vanishes at every scale")]
    SingularFit,
    #[error(transparent)]
    Dsp(#[from] DspError),
}

#[derive(Debug, Error)]
pub enum ConnectivityError {
    #[error("phase series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("top-k must be in 1..={max}, got {k}")]
    InvalidK { k: usize, max: usize },
    #[error("adjacency must be square with at least two nodes, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("index {index} out of range for {len} rows in {op}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("loss must be a 1x1 tensor, got {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("tape already consumed by a backward pass")]
    ConsumedTape,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("node {0} has no neighbours")]
    IsolatedNode(usize),
    #[error("input has {got} features per node, model expects {expected}")]
    InputDimMismatch { expected: usize, got: usize },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("need at least {needed} subjects, got {got}")]
    TooFewSubjects { needed: usize, got: usize },
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("loss diverged (non-finite) at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("all paired differences are zero")]
    DegenerateDifferences,
    #[error("no graphs available for {0}")]
    EmptySplit(&'static str),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("no graphs in group {0}")]
    EmptyGroup(&'static str),
    #[error("mask shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("required channel {0} missing")]
    MissingChannel(String),
    #[error("corrupt header in {path}: {reason}")]
    CorruptHeader { path: PathBuf, reason: String },
    #[error("non-finite sample at channel {channel}, sample {sample}")]
    NonFiniteSample { channel: String, sample: usize },
    #[error("sample rate {0} Hz is too low (must exceed 140 Hz)")]
    SampleRateTooLow(f64),
    #[error("recording has {got} samples, at least {needed} required")]
    TooShortRecording { needed: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("invalid report input: {0}")]
    InvalidReport(String),
    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IoError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> IoError {
        let path = path.into();
        move |source| IoError::IoFailure { path, source }
    }

    pub fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> IoError {
        IoError::CorruptHeader {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

/// Umbrella error used by pipeline code that spans several modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Connectivity(#[from] ConnectivityError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Io(#[from] IoError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
