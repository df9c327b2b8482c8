//! Experiment plumbing: run configuration, on-disk artifacts, the staged
//! pipeline, the repeated three-system comparison and its reports.

pub mod config;
pub mod experiment;
pub mod pipeline;
pub mod report;
pub mod store;

pub use config::{CalibrationSettings, DatasetSettings, RunConfig};
pub use experiment::{
    dataset_panel, run_experiment, run_once, sweep, ComparisonReport, RunArtifacts, Stat, SweepResult,
    SweepRow, SystemSummary, SWEEP_DELTAS, SWEEP_THETAS,
};
pub use pipeline::{
    arbitrate_case, arbitrate_rows, baseline_prediction, calibration_cases, case_report,
    diagnose_rows, evaluate_split, extract_dataset, extract_signals, fit_calibration, hcaa_outcome,
    outcome_prediction, policy_inputs, train_model, verdict_transcript, ArbiterRow, CaseRecord,
    Evaluation, FeatureRow, RuleRow, Verification, BASELINE, HCAA_CALIBRATED, HCAA_UNCALIBRATED,
    SYSTEMS,
};
pub use report::{render_markdown, write_report, EXTERNAL_BASELINES};
