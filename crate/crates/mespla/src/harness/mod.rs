//! Experiment harness: training, RMSE/CDF evaluation, the modality-ablation
//! and lighting-robustness studies, report emission, and the CLI.

pub mod cli;
pub mod experiments;
pub mod metrics;
pub mod report;
pub mod train;
pub mod verify;

pub use experiments::{
    ablation_suite, lighting_suite, run_study, table_combos, AblationReport, AblationRow,
    ExperimentConfig, LightingReport, StudyResults,
};
pub use metrics::{empirical_cdf, evaluate, rmse, Metrics, Split};
pub use report::{ablation_csv, emit_report, parse_ablation_csv};
pub use train::{overfit_probe, prepare, train, LossHistory, TrainConfig};
pub use verify::{gradcheck_full_model, gradcheck_ops};
