//! Experiment protocols behind the command line tool: variance evaluation
//! of the estimators on a frozen policy, training runs and the numerical
//! identity checks. Every protocol is a pure function of its config and
//! emits a deterministic CSV report.

mod checks;
mod config;
mod report;
mod training;
mod variance;

pub use checks::{
    check_report, identity_checks, identity_checks_with, log_log_slope, run_identity_checks, sigma_formula_comparison,
    stein_residual_curve, CheckRow, CHECK_COLUMNS,
};
pub use config::{
    BaselineSpec, CheckSpec, EstimatorSpec, ExperimentConfig, ExperimentKind, ExperimentSection, PolicySpec,
    TrainSection, VarianceSpec,
};
pub use report::{num, CsvReport};
pub use training::{run_training, train_spec, training_report, training_runs, TrainingCell, TRAINING_COLUMNS};
pub use variance::{
    freeze_and_fit, run_variance_eval, variance_batches, variance_eval, variance_report, FrozenSetup, VarianceResults,
    VarianceRow, VARIANCE_COLUMNS,
};
