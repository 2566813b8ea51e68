//! Experiment harness: configuration, runs, sweeps, tables and charts.

pub mod config;
pub mod output;
pub mod plot;
pub mod run;

use thiserror::Error;

use crate::world::WorldError;

pub use config::{load_config, parse_config, Preset, SimulationConfig, SweepAxes, SweepSpec};
pub use output::{csv_record, json_line, json_report, CsvTable, CSV_COLUMNS};
pub use plot::{plot_endorsement_theory, plot_table, Table};
pub use run::{
    compute_metrics, fairness_logs, run_one, run_sweep, world_config, RunReport, SweepRow,
    TARGET_CLIENT,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("plot failed: {0}")]
    Plot(String),
    #[error(transparent)]
    World(#[from] WorldError),
}

impl HarnessError {
    pub fn invalid(field: &str, reason: String) -> Self {
        HarnessError::Invalid {
            field: field.to_owned(),
            reason,
        }
    }
}
