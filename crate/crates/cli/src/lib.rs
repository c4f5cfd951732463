//! Batch front end for ILP experiments: TOML configs, the built-in model
//! registry, CSV/report output and the invariant suite.

pub mod config;
pub mod error;
pub mod output;
pub mod registry;
pub mod run;
pub mod validate;

pub use config::{ExperimentConfig, Overrides};
pub use error::CliError;
pub use run::{run_compare, run_ilp, run_mc, CompareRun, IlpRun};
pub use validate::{run_validate, Inject, ValidationOutcome};
