//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {op} expects matching shapes, got {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("matmul inner dimensions differ: {lhs:?} x {rhs:?}")]
    InnerDimMismatch { lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("invalid axis {axis} for shape {shape:?}")]
    InvalidAxis { axis: usize, shape: Vec<usize> },

    #[error("{op}: invalid argument: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("backward requires a tracked scalar, got shape {shape:?} (tracked: {tracked})")]
    BackwardNonScalar { shape: Vec<usize>, tracked: bool },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("conv2d produces non-positive output extent for input {input:?} with kernel {kernel:?}, stride {stride:?}, padding {padding:?}, dilation {dilation:?}")]
    BadConvGeometry {
        input: Vec<usize>,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        dilation: (usize, usize),
    },

    #[error("genotype invariant violated: {0}")]
    InvalidGenotype(String),

    #[error("unknown operation name: {0:?}")]
    UnknownOpName(String),

    #[error("container format error: {0}")]
    ContainerFormat(String),

    #[error("wav decode error: {0}")]
    WavFormat(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument { op, msg: msg.into() }
    }
}
