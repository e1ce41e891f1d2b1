//! Data ingestion, synthetic data, simulation studies and their reports.

pub mod config;
pub mod data;
pub mod generate;
pub mod report;
pub mod study;

pub use config::{load_study_config, parse_study_config};
pub use data::{load_dataset, write_dataset, DataSchema, LongFormatDataset};
pub use generate::{draw_beta, draw_design, generate_glmm_data, generate_qc_data, DataConfig};
pub use report::{
    estimate_table, mse_table, read_estimates_csv, read_mse_csv, write_report, EstimateRow, MseRow,
};
pub use study::{
    replicate_rng, run_sim_study, CellSummary, ReplicateResult, Scenario, SimStudyConfig,
    StudyResult,
};
