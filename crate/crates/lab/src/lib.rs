//! Config-driven experiment runner on top of `emo-core`.

pub mod config;
pub mod error;
pub mod experiments;
pub mod report;

pub use config::{parse_config, ExperimentConfig, ExperimentKind};
pub use error::{LabError, Result};
pub use experiments::{run_experiment, RunOutcome};
