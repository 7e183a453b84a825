//! Experiment orchestration: TOML configs, seeded end-to-end pipelines,
//! JSON-lines reports and summary tables.
//!
//! Every random draw of a run is derived from `(seed, stage, index)`, so a
//! persisted config plus its seed reproduces a report exactly (wall-clock
//! aside).

mod config;
mod experiment;
mod report;

pub use config::{
    AttackKind, AttackSection, DatasetSection, DefenseSection, ExperimentConfig, ModelSection,
    Paradigm, TransferSection,
};
pub use experiment::{
    load_dataset, run_experiment, run_experiment_on, run_replicates, ExperimentReport, RunDetails,
    TaskReport,
};
pub use report::{read_reports, report, GAP_MARKER};
