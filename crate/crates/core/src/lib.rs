//! Low-rank completion of third-order outcome tensors.
//!
//! [`tensor`] holds the dense [`Tensor3`] container with unfolding,
//! back-folding, mode products and Tucker composition. [`solver`] minimizes a
//! masked least-squares loss plus a nuclear-norm penalty on a matrix (in
//! practice the mode-1 unfolding of a tensor), optionally with covariates,
//! and selects the penalty by cross-validation.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`). The aliases below
//! fix the scalar to `f64`, which is what the statistical crates build on.

pub mod scalar;
pub mod solver;
pub mod tensor;

pub use scalar::Scalar;
pub use solver::{
    complete, complete_with_covariates, cross_validate_lambda, svt, CompletionFit, CovariateModel, CvOptions, CvResult,
    MaskedMatrix, SolverConfig, SolverError,
};
pub use tensor::{fold, mode_product, outer3, tucker_compose, unfold, Mode, ModeMatrix, Tensor3, TensorError};

pub type Tensor3f = Tensor3<f64>;
pub type ModeMatrixF = ModeMatrix<f64>;
pub type MaskedMatrixF = MaskedMatrix<f64>;
pub type SolverConfigF = SolverConfig<f64>;
pub type CompletionFitF = CompletionFit<f64>;
pub type CovariateModelF = CovariateModel<f64>;
pub type CvResultF = CvResult<f64>;

/// Single-precision variants.
pub type Tensor3f32 = Tensor3<f32>;
pub type MaskedMatrixF32 = MaskedMatrix<f32>;
pub type SolverConfigF32 = SolverConfig<f32>;
