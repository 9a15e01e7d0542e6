//! Config-driven experiments: dataset generation, cross-validated runs and
//! run comparison.

mod compare;
mod config;
mod run;

pub use compare::{cmd_compare, Comparison, SUMMARY_CSV, SUMMARY_TXT};
pub use config::{ExperimentConfig, Preset, StageSettings, STAGES};
pub use run::{
    cmd_gen_data, cmd_run, generate_datasets, CurveRow, MetricRow, RunReport, CONFIG_ECHO_FILE, CURVES_FILE,
    DATASETS_FILE, METRICS_FILE, SOURCE_FILE, TARGET_FILE, TEACHER_ROW, UNLABELED_FILE,
};
