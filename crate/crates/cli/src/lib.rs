//! Configuration, experiment orchestration and result emission for the
//! `wassmob` command-line tool.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{ConfigError, ExperimentConfig, ExperimentKind};
pub use experiments::{run_experiment, Artifacts, Check};
pub use output::{emit_results, IoError, Manifest};
