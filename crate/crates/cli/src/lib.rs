//! Command-line front end: configuration loading and the experiment runners.

pub mod config;
pub mod experiments;

pub use config::{load_config, parse_config, ConfigError, ExperimentConfig, Mode, Override};
pub use experiments::{run, Report};
