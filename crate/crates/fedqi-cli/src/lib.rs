//! Experiment orchestration for the fedqi simulator: configuration layers,
//! multi-fold execution across worker threads, and CSV/JSON result emission.

pub mod config;
pub mod emit;
pub mod experiment;
pub mod presets;

pub use config::{ConfigBuilder, ConfigError, DatasetKind, ExperimentConfig, Mode};
pub use emit::emit_results;
pub use experiment::{run_experiment, run_experiment_on, ResultBundle};
