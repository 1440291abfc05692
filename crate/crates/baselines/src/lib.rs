//! Comparison estimators for counterfactual imputation on count panels.
//!
//! Negative-binomial log-linear models ([`fit_nb`]) with unit and period
//! effects, optionally using control outcomes as covariates or as extra
//! outcomes, and univariate matrix completion
//! ([`matrix_completion_baseline`]). [`compare`] runs any mix of these
//! alongside tensor completion on one panel.

mod compare;
mod delta;
mod design;
pub mod nb;

use tensorcf_causal::CausalError;
use thiserror::Error;

pub use compare::{
    compare, matrix_completion_baseline, nb_out_of_sample_mse, run_method, CompareConfig, LambdaChoice, Method,
    MethodReport,
};
pub use delta::{delta_method_interval, DeltaFunctional, DeltaInterval, Z_975};
pub use design::{fit_nb, impute_nb, impute_nb_all, DesignRow, NbDesign, NbFit, NbModelSpec, NbVariant};
pub use nb::{fit_glm, Dispersion, GlmData, GlmFit, NbOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Causal(#[from] CausalError),
}

impl BaselineError {
    /// True for failures of the numerics rather than of the input.
    pub fn is_numerical(&self) -> bool {
        match self {
            BaselineError::Numerical(_) => true,
            BaselineError::Causal(e) => e.is_numerical(),
            _ => false,
        }
    }
}
