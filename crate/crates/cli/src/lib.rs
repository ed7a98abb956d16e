//! Batch runner: experiment configs, the full estimate pipeline, and output files.

pub mod config;
pub mod output;
pub mod run;

pub use config::{parse_config, parse_config_str, ConfigError, ExperimentConfig};
pub use output::emit_outputs;
pub use run::{run_experiment, RunManifest, ScenarioStatus};
