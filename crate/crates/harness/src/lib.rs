//! Configuration, replication, statistics and artifacts for DRM
//! optimization experiments.

pub mod config;
pub mod error;
pub mod experiment;
pub mod stats;
pub mod svg;

pub use config::{ExperimentConfig, Task};
pub use error::{HarnessError, Result};
pub use experiment::{execute, run_experiment, Outcome};
