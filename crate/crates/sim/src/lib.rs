//! Simulation studies: count-panel generators with known counterfactuals,
//! treatment-assignment mechanisms, the method-comparison harness and the
//! error-versus-number-of-outcomes experiment.

mod comparison;
mod mask;
mod rate;
mod scenario;

use tensorcf::{SolverError, TensorError};
use tensorcf_baselines::BaselineError;
use tensorcf_causal::CausalError;
use thiserror::Error;

pub use comparison::{
    replication_seed, run_comparison, run_comparison_with, simulation_config, MethodSummary, RepOutcome, SimResult,
    DEFAULT_METHODS,
};
pub use mask::{mcar_mask, propensity_mask, standardize_columns, within_season_mask, PropensityMask};
pub use rate::{main_effects_tensor, rate_experiment, rate_study, strictly_decreasing, RateConfig};
pub use scenario::{generate, nb_sample, Mechanism, Scenario, SimData, SimScenario};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Causal(#[from] CausalError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

impl From<TensorError> for SimError {
    fn from(e: TensorError) -> Self {
        SimError::Solver(SolverError::Tensor(e))
    }
}

impl SimError {
    /// True for failures of the numerics rather than of the input.
    pub fn is_numerical(&self) -> bool {
        match self {
            SimError::Numerical(_) | SimError::Solver(SolverError::Numerical(_)) => true,
            SimError::Causal(e) => e.is_numerical(),
            SimError::Baseline(e) => e.is_numerical(),
            _ => false,
        }
    }
}
