//! Experiment layer over `bbrl-core`: configuration files, the seeded
//! runner, metric logs, checkpoints and IQM aggregation.

pub mod aggregate;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod metrics;
pub mod runner;

pub use bbrl_core as core;
pub use config::{ExperimentConfig, ExperimentFile};
pub use error::{RunError, RunResult};
