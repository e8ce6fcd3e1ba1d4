//! Experiment harness for the `lhuc` crate: TOML experiment configs,
//! binary checkpoints and datasets, line-delimited metrics, CSV plot tables
//! and the runners behind the `lhuc` command-line tool.

pub mod checkpoint;
pub mod config;
pub mod dataset_io;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod run;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, Provenance};
pub use config::{parse_config, ExperimentConfig, ExperimentKind};
pub use error::{HarnessError, Result};
pub use experiments::{run_experiment, Artifacts, Outcome};
pub use metrics::{MetricRecord, Table};
