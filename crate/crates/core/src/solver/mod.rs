//! Nuclear-norm regularized completion of partially observed matrices.
//!
//! The solver minimizes
//!
//! ```text
//! ½ Σ_{(i,j) ∈ O} (y_ij − Θ_ij)² + λ ‖Θ‖_*
//! ```
//!
//! by soft-impute: fill unobserved entries with the current estimate and take
//! one singular-value thresholding step. Each step minimizes a majorizer of the
//! objective, so the objective never increases. Callers pass the mode-1
//! unfolding of an outcome tensor; only that unfolding is penalized.

mod complete;
mod covariates;
mod cv;
mod svd;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::TensorError;

pub use complete::{complete, complete_warm, continuation_path};
pub use covariates::{complete_with_covariates, CovariateFit, CovariateModel};
pub use cv::{cross_validate_lambda, default_folds, default_lambda_grid, CvOptions, CvResult};
pub use svd::{nuclear_norm, spectral_norm, svt, thin_svd, ThinSvd};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid solver input: {0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Matrix with a set of observed entries. Values elsewhere are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMatrix<T: Scalar> {
    values: DMatrix<T>,
    mask: DMatrix<bool>,
    observed: Vec<(usize, usize)>,
}

impl<T: Scalar> MaskedMatrix<T> {
    /// Build from an explicit list of observed `(row, col)` pairs.
    pub fn new(values: DMatrix<T>, observed: Vec<(usize, usize)>) -> Result<Self, SolverError> {
        let (rows, cols) = values.shape();
        let mut mask = DMatrix::from_element(rows, cols, false);
        for &(r, c) in &observed {
            if r >= rows || c >= cols {
                return Err(SolverError::Input(format!("observed index ({r}, {c}) out of bounds for {rows}x{cols}")));
            }
            if mask[(r, c)] {
                return Err(SolverError::Input(format!("duplicate observed index ({r}, {c})")));
            }
            mask[(r, c)] = true;
        }
        Ok(Self { values, mask, observed })
    }

    /// Build from a boolean mask (`true` = observed).
    pub fn from_mask(values: DMatrix<T>, mask: DMatrix<bool>) -> Result<Self, SolverError> {
        if values.shape() != mask.shape() {
            return Err(SolverError::Input(format!(
                "mask shape {:?} does not match values {:?}",
                mask.shape(),
                values.shape()
            )));
        }
        let mut observed = Vec::new();
        for c in 0..mask.ncols() {
            for r in 0..mask.nrows() {
                if mask[(r, c)] {
                    observed.push((r, c));
                }
            }
        }
        Ok(Self { values, mask, observed })
    }

    pub fn fully_observed(values: DMatrix<T>) -> Self {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self::from_mask(values, mask).expect("shapes agree")
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<T> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn observed(&self) -> &[(usize, usize)] {
        &self.observed
    }

    pub fn is_observed(&self, r: usize, c: usize) -> bool {
        self.mask[(r, c)]
    }

    /// `P_O(y)`: observed values, zeros elsewhere.
    pub fn zero_filled(&self) -> DMatrix<T> {
        DMatrix::from_fn(
            self.rows(),
            self.cols(),
            |r, c| {
                if self.mask[(r, c)] {
                    self.values[(r, c)]
                } else {
                    T::zero()
                }
            },
        )
    }

    /// Same values with a reduced observed set.
    pub fn without(&self, hidden: &[(usize, usize)]) -> Self {
        let mut mask = self.mask.clone();
        for &(r, c) in hidden {
            mask[(r, c)] = false;
        }
        Self::from_mask(self.values.clone(), mask).expect("shapes agree")
    }

    /// Same mask with replaced values.
    pub fn with_values(&self, values: DMatrix<T>) -> Result<Self, SolverError> {
        if values.shape() != self.values.shape() {
            return Err(SolverError::Input("replacement values have the wrong shape".into()));
        }
        Ok(Self { values, mask: self.mask.clone(), observed: self.observed.clone() })
    }

    pub(crate) fn validate_for_solve(&self) -> Result<(), SolverError> {
        if self.observed.is_empty() {
            return Err(SolverError::Input("no observed entries".into()));
        }
        if let Some(&(r, c)) = self.observed.iter().find(|&&(r, c)| !self.values[(r, c)].is_finite_value()) {
            return Err(SolverError::Input(format!("non-finite observed value at ({r}, {c})")));
        }
        Ok(())
    }
}

/// Solver settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig<T: Scalar> {
    /// Weight of the nuclear-norm penalty.
    pub lambda: T,
    pub max_iters: usize,
    /// Relative objective change that counts as converged.
    pub tol: T,
    /// Use a randomized SVD that keeps at most this many singular triplets.
    pub svd_rank_cap: Option<usize>,
    /// Solve along a decreasing λ path, warm-starting each stage.
    pub continuation: bool,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self { lambda: T::zero(), max_iters: 500, tol: T::lit(1e-7), svd_rank_cap: None, continuation: false }
    }
}

impl<T: Scalar> SolverConfig<T> {
    pub fn with_lambda(lambda: T) -> Self {
        Self { lambda, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !self.lambda.is_finite_value() || self.lambda < T::zero() {
            return Err(SolverError::Input(format!("lambda must be finite and nonnegative, got {}", self.lambda)));
        }
        if !(self.tol > T::zero()) {
            return Err(SolverError::Input("tol must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(SolverError::Input("max_iters must be at least 1".into()));
        }
        if self.svd_rank_cap == Some(0) {
            return Err(SolverError::Input("svd_rank_cap must be positive".into()));
        }
        Ok(())
    }
}

/// Output of a completion solve.
#[derive(Debug, Clone)]
pub struct CompletionFit<T: Scalar> {
    /// Full fitted matrix; unobserved entries are the imputations.
    pub theta_hat: DMatrix<T>,
    /// Low-rank component (equals `theta_hat` without covariates).
    pub low_rank: DMatrix<T>,
    /// Objective after every iteration of the final λ stage.
    pub objective_trace: Vec<T>,
    /// Number of singular values above `1e-8 · σ₁`.
    pub rank_hat: usize,
    /// Shrunk singular values of the low-rank component.
    pub singular_values: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
    pub covariates: Option<CovariateFit<T>>,
}

impl<T: Scalar> CompletionFit<T> {
    pub fn final_objective(&self) -> Option<T> {
        self.objective_trace.last().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masked_matrix_validation() {
        let v = DMatrix::<f64>::zeros(2, 2);
        assert!(MaskedMatrix::new(v.clone(), vec![(0, 0), (0, 0)]).is_err());
        assert!(MaskedMatrix::new(v.clone(), vec![(2, 0)]).is_err());
        let m = MaskedMatrix::new(v.clone(), vec![(1, 1), (0, 1)]).unwrap();
        assert!(m.is_observed(1, 1) && !m.is_observed(0, 0));
        assert!(MaskedMatrix::from_mask(v, DMatrix::from_element(3, 2, true)).is_err());
    }

    #[test]
    fn unobserved_values_are_ignored_by_projection() {
        let v = DMatrix::from_row_slice(1, 2, &[1.0, f64::NAN]);
        let m = MaskedMatrix::new(v, vec![(0, 0)]).unwrap();
        assert_eq!(m.zero_filled(), DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        assert!(m.validate_for_solve().is_ok());
    }

    #[test]
    fn config_validation() {
        let mut cfg = SolverConfig::<f64>::default();
        assert!(cfg.validate().is_ok());
        cfg.tol = 0.0;
        assert!(cfg.validate().is_err());
        let cfg = SolverConfig::<f64> { max_iters: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
        assert!(SolverConfig::with_lambda(-1.0f64).validate().is_err());
    }
}
