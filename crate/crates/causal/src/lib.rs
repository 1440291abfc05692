//! Counterfactual imputation for panels of unit × period outcomes.
//!
//! A [`PanelDataset`] holds the outcome of interest with its treatment mask
//! plus auxiliary control outcomes. The untreated potential outcome `Y⁰` is
//! missing wherever treatment applies; it is imputed by low-rank completion
//! of the stacked outcomes ([`impute_counterfactuals`]), the average relative
//! effect on the treated cells is computed by [`estimate_delta`], and
//! [`bootstrap_interval`] attaches a residual-permutation interval.

mod bootstrap;
mod effect;
mod impute;
mod panel;

use nalgebra::DMatrix;
use tensorcf::{SolverConfig, SolverError, TensorError};
use thiserror::Error;

pub use bootstrap::{bootstrap_interval, percentile, BootstrapResult};
pub use effect::{estimate_delta, CellEffect, EffectEstimate};
pub use impute::{
    impute_counterfactuals, impute_with, out_of_sample_mse, select_lambda, CompletionMethod, CompletionProblem,
    Diagnostics, Imputation,
};
pub use panel::{assemble_tensor, ControlOutcome, NamedMatrix, PanelCovariates, PanelDataset, TensorCell, Transform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CausalError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

impl From<TensorError> for CausalError {
    fn from(e: TensorError) -> Self {
        CausalError::Solver(SolverError::Tensor(e))
    }
}

impl CausalError {
    /// True for failures of the numerics rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, CausalError::Numerical(_) | CausalError::Solver(SolverError::Numerical(_)))
    }
}

/// Imputation plus effect estimate for one completion method.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub method: CompletionMethod,
    pub lambda: f64,
    pub y0_hat: DMatrix<f64>,
    pub effect: EffectEstimate,
    pub diagnostics: Diagnostics,
    pub rank_hat: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Impute with `method` and estimate the effect on the treated cells.
pub fn fit_and_estimate(
    d: &PanelDataset,
    method: CompletionMethod,
    cfg: &SolverConfig<f64>,
) -> Result<FitResult, CausalError> {
    let imp = impute_with(d, method, cfg)?;
    let effect = estimate_delta(&d.y1_for_effect(), &imp.y0_hat, &d.w)?;
    Ok(FitResult {
        method,
        lambda: cfg.lambda,
        effect,
        diagnostics: imp.diagnostics,
        rank_hat: imp.fit.rank_hat,
        iterations: imp.fit.iterations,
        converged: imp.fit.converged,
        y0_hat: imp.y0_hat,
    })
}
