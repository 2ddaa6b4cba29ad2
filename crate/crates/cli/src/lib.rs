//! Configuration loading, experiment dispatch and result export for the
//! `ergolab` command line tool. The config schema is described in
//! `docs/config.md` at the repository root.

pub mod config;
pub mod error;
pub mod run;

pub use config::{load_config, Experiment, ExperimentConfig};
pub use error::{CliError, Result};
pub use run::{run, ResultManifest, RunRecord, Subcommand};
