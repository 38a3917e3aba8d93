//! Experiment orchestration: configuration, checkpoints, artifacts and
//! complete runs.

pub mod artifacts;
pub mod checkpoint;
pub mod config;
pub mod run;

pub use artifacts::{export_front_csv, import_front_csv};
pub use checkpoint::{load_meta_state, load_policy, load_value, save_meta_state, save_policy, save_value};
pub use config::{ExperimentConfig, Method, Overrides};
pub use run::{finetune_run, ra_run, run_experiment, run_experiment_with, train_meta_run, RunOptions, RunSummary};
