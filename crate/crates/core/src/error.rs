//! Error types, one enum per subsystem.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("invalid digitizer spec: {0}")]
    InvalidSpec(String),
    #[error("trace has {actual} samples but its spec declares {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("trace contains a non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("sample clocks differ: {a} Hz vs {b} Hz")]
    MismatchedClock { a: f64, b: f64 },
    #[error("trace lengths differ: {a} vs {b}")]
    MismatchedLength { a: usize, b: usize },
    #[error("digitizer settings differ between the two traces")]
    MismatchedDigitizer,
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SourceError {
    #[error("invalid source parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("transmission must lie in (0, 1], got {0}")]
    InvalidTransmission(f64),
    #[error("electronic noise rms must be finite and >= 0, got {0}")]
    InvalidNoise(f64),
    #[error("invalid channel parameters: {0}")]
    InvalidParams(String),
    #[error("delay kernel spans {kernel} samples, too wide for a {n}-sample trace")]
    KernelTooWide { kernel: usize, n: usize },
    #[error("trace carries no shot-noise variance; loss noise cannot be sized")]
    MissingShotVariance,
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("invalid band {f_lo} Hz .. {f_hi} Hz for sample rate {sample_rate} Hz")]
    InvalidBand {
        f_lo: f64,
        f_hi: f64,
        sample_rate: f64,
    },
    #[error("segment length {segment} must be a power of two no larger than {n}")]
    InvalidSegment { segment: usize, n: usize },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MiError {
    #[error("trace has zero dynamic range (constant samples)")]
    DegenerateRange,
    #[error("histogram is empty")]
    EmptyHistogram,
    #[error("need at least 2 bins per axis, got {0}")]
    TooFewBins(usize),
    #[error("delay step {step} s is not an integer number of sample periods ({period} s)")]
    StepNotSampleAligned { step: f64, period: f64 },
    #[error("scan needs {needed} samples of overlap margin but the trace has {n}")]
    TraceTooShort { needed: usize, n: usize },
    #[error("curves are on different delay grids")]
    GridMismatch,
    #[error("no curves to average")]
    NoCurves,
    #[error("reference peak must be positive and finite, got {0}")]
    NonpositiveReference(f64),
    #[error("curve maximum sits on the edge of the delay range")]
    NoPeak,
    #[error("curve never falls below half maximum inside the delay range")]
    HalfMaximumOutOfRange,
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("least-squares fit did not converge: {0}")]
    FitDiverged(String),
    #[error("measured width {measured} s is below the unbroadened floor {floor} s")]
    BracketFailure { measured: f64, floor: f64 },
    #[error("adaptive quadrature did not reach tolerance (estimated error {0:e})")]
    QuadratureNonConvergence(f64),
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Mi(#[from] MiError),
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("file does not start with the TWBM magic")]
    BadMagic,
    #[error("unsupported TWBM version {0}")]
    UnsupportedVersion(u32),
    #[error("header declares {declared} payload bytes but {actual} are present")]
    HeaderMismatch { declared: usize, actual: usize },
    #[error("time column is not uniformly sampled (row {row}, relative jitter {jitter:e})")]
    NonUniformTime { row: usize, jitter: f64 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("u8 encoding needs samples on a grid of at most 256 levels: {0}")]
    NotOnGrid(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
