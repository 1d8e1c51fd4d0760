//! Experiment runner for the self-play laboratory.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod run;

pub use config::{load_config, ExperimentKind, LoadedConfig, RunConfig};
pub use manifest::RunManifest;
pub use run::{run_experiment, RunOptions, RunOutcome};
