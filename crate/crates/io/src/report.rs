//! Report tables (CSV) and the run manifest (JSON).

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tensorcf_baselines::MethodReport;
use tensorcf_causal::PanelDataset;
use tensorcf_sim::SimResult;

use crate::config::RunConfig;
use crate::IoError;

/// One estimator's line of the comparison table. Failed methods keep
/// their row with empty numbers and the message in `error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub lambda: Option<f64>,
    pub in_sample_mse: Option<f64>,
    pub out_of_sample_mse: Option<f64>,
    pub delta_hat: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub interval_reliable: Option<bool>,
    pub converged: Option<bool>,
    pub n_excluded: Option<usize>,
    pub error: String,
}

impl ComparisonRow {
    pub fn from_report(r: &MethodReport) -> Self {
        Self {
            method: r.method.label().into(),
            lambda: r.lambda,
            in_sample_mse: finite(r.in_sample_mse),
            out_of_sample_mse: r.out_of_sample_mse.and_then(finite),
            delta_hat: finite(r.delta_hat),
            ci_lo: r.interval.map(|i| i.0),
            ci_hi: r.interval.map(|i| i.1),
            interval_reliable: r.interval.map(|_| r.interval_reliable),
            converged: Some(r.converged),
            n_excluded: Some(r.n_excluded),
            error: String::new(),
        }
    }

    pub fn failed(method: &str, error: &str) -> Self {
        Self {
            method: method.into(),
            lambda: None,
            in_sample_mse: None,
            out_of_sample_mse: None,
            delta_hat: None,
            ci_lo: None,
            ci_hi: None,
            interval_reliable: None,
            converged: None,
            n_excluded: None,
            error: error.into(),
        }
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Imputed `Y⁰` by method, one row per treated cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationRow {
    pub method: String,
    pub unit_id: String,
    pub period: i64,
    pub y1: Option<f64>,
    pub y0_hat: f64,
}

pub fn imputation_rows(d: &PanelDataset, r: &MethodReport) -> Vec<ImputationRow> {
    d.treated_cells()
        .into_iter()
        .map(|(i, t)| ImputationRow {
            method: r.method.label().into(),
            unit_id: d.unit_ids[i].clone(),
            period: d.periods[t],
            y1: d.is_recorded(i, t).then(|| d.y_obs[(i, t)]),
            y0_hat: r.y0_hat[(i, t)],
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub method: String,
    pub lambda: f64,
    pub cv_error: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRow {
    pub method: String,
    pub lambda: f64,
    pub delta_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawRow {
    pub method: String,
    pub rep: usize,
    pub delta_hat: f64,
}

/// Per-method summary of a simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummaryRow {
    pub scenario: String,
    pub method: String,
    pub reps: usize,
    pub truth_delta: f64,
    pub mean_delta_hat: Option<f64>,
    pub mean_mse: Option<f64>,
    pub median_mape: Option<f64>,
    pub n_failed: usize,
    pub n_nonconverged: usize,
}

/// One method in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRepRow {
    pub scenario: String,
    pub method: String,
    pub rep: usize,
    pub delta_hat: Option<f64>,
    pub mse: Option<f64>,
    pub mean_mape: Option<f64>,
    pub converged: Option<bool>,
    pub error: String,
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    xs.retain(|v| v.is_finite());
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    Some(if xs.len() % 2 == 1 { xs[m] } else { 0.5 * (xs[m - 1] + xs[m]) })
}

pub fn sim_tables(res: &SimResult) -> (Vec<SimSummaryRow>, Vec<SimRepRow>) {
    let scenario = res.scenario.which.to_string();
    let mut summary = Vec::new();
    let mut reps = Vec::new();
    for m in &res.per_method {
        let mapes: Vec<f64> = m.reps.iter().flatten().flat_map(|r| r.mape.iter().copied()).collect();
        summary.push(SimSummaryRow {
            scenario: scenario.clone(),
            method: m.method.label().into(),
            reps: res.n_reps,
            truth_delta: res.truth_delta,
            mean_delta_hat: finite(m.mean_delta_hat),
            mean_mse: finite(m.mean_mse),
            median_mape: median(mapes),
            n_failed: m.n_failed(),
            n_nonconverged: m.n_nonconverged(),
        });
        for (rep, outcome) in m.reps.iter().enumerate() {
            let row = match outcome {
                Some(o) => {
                    let valid: Vec<f64> = o.mape.iter().copied().filter(|v| v.is_finite()).collect();
                    SimRepRow {
                        scenario: scenario.clone(),
                        method: m.method.label().into(),
                        rep,
                        delta_hat: Some(o.delta_hat),
                        mse: finite(o.mse),
                        mean_mape: (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64),
                        converged: Some(o.converged),
                        error: String::new(),
                    }
                }
                None => SimRepRow {
                    scenario: scenario.clone(),
                    method: m.method.label().into(),
                    rep,
                    delta_hat: None,
                    mse: None,
                    mean_mape: None,
                    converged: None,
                    error: m.errors.iter().find(|(r, _)| *r == rep).map(|(_, e)| e.clone()).unwrap_or_default(),
                },
            };
            reps.push(row);
        }
    }
    (summary, reps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub seed: u64,
    pub k: usize,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummaryRow {
    pub k: usize,
    pub mean_rmse: f64,
    /// Share of seeds whose RMSE falls strictly along the whole K grid.
    pub share_strictly_decreasing: f64,
}

/// Serialize rows with a header to `path`.
pub fn write_table<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), IoError> {
    let file = std::fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    write_rows(file, rows)
}

pub fn write_rows<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<(), IoError> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| IoError::Io(e.to_string()))?;
    Ok(())
}

/// Parse a table written by [`write_table`].
pub fn read_table<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, IoError> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(IoError::from)).collect()
}

/// Reproducibility record written next to the tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub tool_version: String,
    /// The effective config, including command-line overrides.
    pub config: RunConfig,
    pub data: Option<PathBuf>,
    /// Report files, relative to the output directory.
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig, outputs: Vec<String>) -> Self {
        Self {
            command: command.into(),
            seed: cfg.seed,
            config_sha256: cfg.hash(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config: cfg.clone(),
            data: cfg.data.clone(),
            outputs,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, IoError> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| IoError::Io(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| IoError::io(&path, e))?;
        Ok(path)
    }
}
