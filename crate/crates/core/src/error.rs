use alloc::string::String;

/// Failures reported by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("scale count J={j} too large for a {height}x{width} grid")]
    ScaleTooLarge { j: usize, height: usize, width: usize },
    #[error("downsampling factor {alpha} leaves no effective scale for J={j}")]
    FactorTooLarge { alpha: f64, j: usize },
    #[error("feature path set does not match the scattering configuration")]
    PathMismatch,
    #[error("sample list is empty")]
    EmptySamples,
    #[error("diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_err(expected: impl core::fmt::Debug, actual: impl core::fmt::Debug) -> Error {
    Error::ShapeMismatch {
        expected: alloc::format!("{expected:?}"),
        actual: alloc::format!("{actual:?}"),
    }
}
