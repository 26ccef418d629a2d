//! Distortion risk measure optimization by multi-timescale stochastic
//! approximation.

pub mod distortion;
pub mod error;
pub mod estimators;
pub mod inventory;
pub mod model;
pub mod normal;
pub mod optimizer;
pub mod oracle;

pub use error::{DrmError, Result};
