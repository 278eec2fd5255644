//! Configuration, orchestration and output for the `hdbandit` command.

pub mod config;
pub mod output;
pub mod run;

pub use config::{parse_config, to_toml, ExperimentConfig, Mode, Overrides};
pub use run::{run, RunReport};
