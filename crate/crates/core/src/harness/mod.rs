//! Experiment harness: configuration files, single runs, seed sweeps, CSV
//! output and the ordering and trend checks applied to sweep results.

pub mod analysis;
pub mod config;
pub mod runner;

use thiserror::Error;

pub use analysis::{
    check_ordering, emit_plot_data, iqr, kendall_tau, median, write_plot_csv, OrderingReport, PairCheck, PlotPoint,
    Table,
};
pub use config::{ExperimentConfig, ProtocolKind, ProtocolSection};
pub use runner::{
    run_experiment, simulate, sweep_interarrival, sweep_ta, write_metrics_csv, write_ta_csv, MacSet,
    MetricsRow, Outcome, TaRow, CSV_HEADER,
};

#[derive(Debug, Error, PartialEq)]
pub enum HarnessError {
    #[error("config: {0}")]
    Parse(String),
    #[error("{0}: {1}")]
    Io(String, String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unsupported combination: {0}")]
    Unsupported(String),
    #[error("unknown protocol {0:?}")]
    UnknownProtocol(String),
    #[error("topology: {0}")]
    Topology(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("missing data: {0}")]
    MissingData(String),
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Csv(e.to_string())
    }
}
