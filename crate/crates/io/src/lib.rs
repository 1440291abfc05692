//! Data ingestion, run configuration and report emission for the
//! command-line tool.

pub mod config;
pub mod panel_csv;
pub mod report;

use std::path::Path;

use tensorcf_baselines::BaselineError;
use tensorcf_causal::CausalError;
use tensorcf_sim::SimError;
use thiserror::Error;

pub use config::{CovariateSpec, RateSection, RunConfig, SimulateSection, SolverSection};
pub use panel_csv::{config_for, export_panel, load_panel, read_panel, Gap, GapReport, LoadedPanel};
pub use report::{
    imputation_rows, read_table, sim_tables, write_rows, write_table, BootstrapRow, ComparisonRow, CvRow, DrawRow,
    ImputationRow, Manifest, RateRow, RateSummaryRow, SimRepRow, SimSummaryRow,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{0}")]
    Io(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Causal(#[from] CausalError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl IoError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        IoError::Io(format!("{}: {e}", path.display()))
    }

    /// True for failures of the numerics rather than of the input.
    pub fn is_numerical(&self) -> bool {
        match self {
            IoError::Causal(e) => e.is_numerical(),
            IoError::Baseline(e) => e.is_numerical(),
            IoError::Sim(e) => e.is_numerical(),
            _ => false,
        }
    }
}

impl From<csv::Error> for IoError {
    fn from(e: csv::Error) -> Self {
        match e.position() {
            Some(p) => IoError::Parse { line: p.line(), message: e.to_string() },
            None => IoError::Io(e.to_string()),
        }
    }
}
