use std::path::PathBuf;

use thiserror::Error;

/// Which stage of the integer MAC pipeline overflowed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacStep {
    /// Low-bit dot products into the 32-bit accumulator.
    Accumulate,
    /// Fixed-point coefficient multiply and summation.
    Coefficient,
}

impl std::fmt::Display for MacStep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MacStep::Accumulate => f.write_str("step 1 (accumulate)"),
            MacStep::Coefficient => f.write_str("step 2 (coefficient)"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {path}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("layer `{layer}`: {field} file {path} does not exist")]
    MissingFile {
        layer: String,
        field: &'static str,
        path: PathBuf,
    },

    #[error("layer `{layer}`: {field} has {actual} bytes, expected {expected}")]
    SizeMismatch {
        layer: String,
        field: &'static str,
        expected: u64,
        actual: u64,
    },

    #[error("layer `{layer}`: {field} holds a non-finite value at element {index}")]
    NonFiniteValue {
        layer: String,
        field: &'static str,
        index: usize,
    },

    #[error("duplicate layer name `{0}`")]
    DuplicateLayer(String),

    #[error("layer `{0}` has no calibration batch")]
    MissingCalibration(String),

    #[error("non-finite input at position {0}")]
    NonFinite(usize),

    #[error("grid index {index} out of range for {bits}-bit grid")]
    IndexOutOfRange { index: i64, bits: u32 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("residual is zero; nothing left to approximate")]
    ZeroResidual,

    #[error("dimension {0} too large for exhaustive enumeration (max {1})")]
    DimensionTooLarge(usize, usize),

    #[error("integer overflow in {0}")]
    Overflow(MacStep),

    #[error("coefficient {value} does not fit a 32-bit fixed-point word at p = {precision}")]
    CoefficientOverflow { value: f64, precision: u32 },

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for internal invariant violations, false for anything caused by bad input.
    pub fn is_internal(&self) -> bool {
        matches!(self, Error::Invariant(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
