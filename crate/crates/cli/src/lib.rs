//! Configuration files, experiment drivers and report writers for the
//! `riesz` command-line tool.

pub mod config;
pub mod error;
pub mod experiments;
pub mod report;

pub use config::{Outcome, Problem, RunConfig};
pub use error::{CliError, Result};
pub use experiments::{ExperimentName, Overrides};
