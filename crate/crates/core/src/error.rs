use thiserror::Error;

/// Errors raised by the DRM library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DrmError {
    #[error("argument {name} = {value} outside its domain: {expected}")]
    Domain {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },
    #[error("distortion {kind} is not differentiable at z = {z}")]
    NonDifferentiable { kind: String, z: f64 },
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot parse {what} from {input:?}: {reason}")]
    Parse {
        what: &'static str,
        input: String,
        reason: String,
    },
    #[error("degenerate: {0}")]
    Degenerate(String),
    #[error("root finding failed: {0}")]
    RootFinding(String),
    #[error("non-finite update at iteration {iteration}: {detail}")]
    NonFinite { iteration: u64, detail: String },
    #[error("insufficient data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, DrmError>;

pub(crate) fn domain(name: &'static str, value: f64, expected: &'static str) -> DrmError {
    DrmError::Domain {
        name,
        value,
        expected,
    }
}
