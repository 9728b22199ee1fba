//! Experiment orchestration for the `hubspy` command-line tool: TOML
//! experiment configs, seeded scenario runs written to run directories, and
//! report tables rebuilt from those directories.

pub mod config;
pub mod exit;
pub mod run;
pub mod tables;

pub use config::{ExperimentConfig, Scenario};
pub use exit::ExitCategory;
pub use run::{load_run, run_experiment, RunMetadata, RunReport};
pub use tables::{reproduce_tables, write_tables, ReportTable};
