//! Configuration, orchestration and reporting for the canonical experiments.

pub mod config;
pub mod experiments;
pub mod report;

pub use config::{parse_config, parse_config_with, ExperimentConfig, ExperimentKind};
pub use experiments::{compute, run_experiment};
pub use report::{ExperimentReport, Metric};
