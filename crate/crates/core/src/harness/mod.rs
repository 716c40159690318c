//! Experiment configuration, orchestration, metrics and file output.

mod config;
mod experiment;
mod metrics;
pub mod output;

pub use config::{apply_override, AblationTag, DatasetConfig, ExperimentConfig, GsaSettings, ModelConfig};
pub use experiment::{
    ablation_configs, build_clients, evaluate, predict_all, run_experiment, ExperimentOutcome, ExperimentSummary,
    Record, SampleDiagnostic, Setup, TaskEvaluation,
};
pub use metrics::{accuracy_matrix, AccuracyMatrix};
