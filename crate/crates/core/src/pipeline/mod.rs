//! Datasets, experiment configuration, the runner and reports.

pub mod config;
mod data;
mod experiment;
pub mod report;

pub use config::{DataConfig, DataSource, ExperimentConfig, Method};
pub use data::{blob_means, generate_synthetic, load_csv, write_csv, LabeledDataset, Provenance};
pub use experiment::{fit_student, load_datasets, run_experiment};
pub use report::{emit_report, ExperimentReport, MethodResult};
