//! Error type shared across the crate.

use std::fmt;

/// Result alias used throughout the crate.
pub type CoreResult<T> = Result<T, CoreError>;

/// Errors produced by tensor operations, network construction, execution,
/// training and the data pipeline.
#[derive(Debug)]
pub enum CoreError {
    /// Two tensors that must agree in shape do not.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A tensor does not have the rank an operation requires.
    RankMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    /// Buffer length does not match the product of the extents.
    DataLength { expected: usize, got: usize },
    /// Channel extent must be even (coupling split point).
    OddChannels { op: &'static str, channels: usize },
    /// Channel extent differs from what an operator expects.
    ChannelMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    /// Channel extent is not divisible by the cubed upsampling rate.
    IndivisibleChannels { channels: usize, rate: usize },
    /// Spatial extent is not divisible by the upsampling rate.
    IndivisibleExtent { extent: usize, rate: usize },
    /// A valid convolution would produce a non-positive spatial extent.
    ConvUnderflow {
        input_extent: usize,
        kernel_extent: usize,
        padding: usize,
    },
    /// Forward pass failed at a specific layer.
    LayerShape { layer: usize, detail: String },
    /// Network description violates a construction invariant.
    InvalidSpec(String),
    /// Cached checkpoint count does not match the network description.
    CheckpointMismatch { expected: usize, got: usize },
    /// Parameter registries that must align (paths and shapes) do not.
    RegistryMismatch { detail: String },
    /// An operation received an empty input.
    EmptyInput(&'static str),
    /// Patch sampling asked for more positions than the mask admits.
    InsufficientPatches { available: usize, requested: usize },
    /// A channel has (numerically) zero variance and cannot be normalized.
    DegenerateChannel { channel: usize, variance: f64 },
    /// All paired differences are zero; the signed-rank test is undefined.
    DegenerateWilcoxon,
    /// Sample size outside the supported exact-distribution regime.
    SampleSizeOutOfRange { n: usize, min: usize, max: usize },
    /// Patch placement falls outside the output volume.
    OutOfBounds { detail: String },
    /// A computation produced or received a non-finite value.
    NonFinite { context: String },
    /// Underlying I/O failure.
    Io(std::io::Error),
    /// Malformed file contents (bad magic, version, or layout).
    Format(String),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shape mismatch, left={left:?} right={right:?}")
            }
            CoreError::RankMismatch { op, expected, got } => {
                write!(f, "{op}: expected rank {expected}, got {got}")
            }
            CoreError::DataLength { expected, got } => {
                write!(f, "data length {got} does not match shape product {expected}")
            }
            CoreError::OddChannels { op, channels } => {
                write!(f, "{op}: channel extent {channels} must be even")
            }
            CoreError::ChannelMismatch { op, expected, got } => {
                write!(f, "{op}: expected {expected} channels, got {got}")
            }
            CoreError::IndivisibleChannels { channels, rate } => {
                write!(f, "channel extent {channels} not divisible by rate^3 = {}", rate.pow(3))
            }
            CoreError::IndivisibleExtent { extent, rate } => {
                write!(f, "spatial extent {extent} not divisible by rate {rate}")
            }
            CoreError::ConvUnderflow {
                input_extent,
                kernel_extent,
                padding,
            } => write!(
                f,
                "convolution output extent would be non-positive (input {input_extent}, kernel {kernel_extent}, padding {padding})"
            ),
            CoreError::LayerShape { layer, detail } => {
                write!(f, "layer {layer}: {detail}")
            }
            CoreError::InvalidSpec(msg) => write!(f, "invalid network spec: {msg}"),
            CoreError::CheckpointMismatch { expected, got } => {
                write!(f, "expected {expected} cached boundary activations, got {got}")
            }
            CoreError::RegistryMismatch { detail } => {
                write!(f, "parameter registry mismatch: {detail}")
            }
            CoreError::EmptyInput(what) => write!(f, "{what} must not be empty"),
            CoreError::InsufficientPatches { available, requested } => write!(
                f,
                "requested {requested} patches but only {available} masked positions are available"
            ),
            CoreError::DegenerateChannel { channel, variance } => write!(
                f,
                "channel {channel} has degenerate variance {variance}; cannot normalize"
            ),
            CoreError::DegenerateWilcoxon => {
                write!(f, "all paired differences are zero; signed-rank test undefined")
            }
            CoreError::SampleSizeOutOfRange { n, min, max } => {
                write!(f, "sample size {n} outside exact regime [{min}, {max}]")
            }
            CoreError::OutOfBounds { detail } => write!(f, "out of bounds: {detail}"),
            CoreError::NonFinite { context } => write!(f, "non-finite value in {context}"),
            CoreError::Io(e) => write!(f, "i/o error: {e}"),
            CoreError::Format(msg) => write!(f, "format error: {msg}"),
        }
    }
}

impl std::error::Error for CoreError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            CoreError::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for CoreError {
    fn from(e: std::io::Error) -> Self {
        CoreError::Io(e)
    }
}
