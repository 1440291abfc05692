//! K-fold (or leave-one-out) cross-validation of the penalty weight.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::complete::{solve, Design};
use super::covariates::CovariateModel;
use super::svd::spectral_norm;
use super::{MaskedMatrix, SolverConfig, SolverError};
use crate::scalar::Scalar;

/// Observed-entry count up to which leave-one-out is the default.
pub const LOOCV_MAX_ENTRIES: usize = 5_000;
const DEFAULT_GRID_POINTS: usize = 20;

/// Cross-validation settings.
#[derive(Debug, Clone)]
pub struct CvOptions {
    /// Number of folds; equal to the number of eligible entries for leave-one-out.
    pub folds: usize,
    pub seed: u64,
    /// Entries eligible for holding out. `None` means every observed entry.
    pub holdout: Option<Vec<(usize, usize)>>,
}

impl CvOptions {
    pub fn new(folds: usize, seed: u64) -> Self {
        Self { folds, seed, holdout: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult<T: Scalar> {
    pub lambda_star: T,
    /// `(lambda, mean held-out squared error)` in grid order.
    pub table: Vec<(T, T)>,
}

/// Log-spaced grid of 20 values spanning `[1e-3, 1] · ‖P_O(y)‖_op`, descending.
pub fn default_lambda_grid<T: Scalar>(y: &MaskedMatrix<T>) -> Result<Vec<T>, SolverError> {
    let top = spectral_norm(&y.zero_filled())?;
    let n = DEFAULT_GRID_POINTS;
    Ok((0..n).map(|i| top * T::lit(10f64.powf(-3.0 * i as f64 / (n - 1) as f64))).collect())
}

/// Leave-one-out when the tensor has at most 5000 entries, else 10 folds.
pub fn default_folds(total_entries: usize, eligible: usize) -> usize {
    if total_entries <= LOOCV_MAX_ENTRIES {
        eligible
    } else {
        10.min(eligible)
    }
}

/// Seeded fold assignment: shuffle, then deal entries round-robin.
pub(crate) fn assign_folds(entries: &[(usize, usize)], folds: usize, seed: u64) -> Vec<Vec<(usize, usize)>> {
    let mut shuffled = entries.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (pos, entry) in shuffled.into_iter().enumerate() {
        out[pos % folds].push(entry);
    }
    out
}

/// Squared held-out error per grid point for one fold, solving along the
/// grid from the largest λ down with warm starts.
fn fold_errors<T: Scalar>(
    y: &MaskedMatrix<T>,
    cov: &CovariateModel<T>,
    order: &[usize],
    grid: &[T],
    held: &[(usize, usize)],
    base: &SolverConfig<T>,
) -> Result<Vec<T>, SolverError> {
    let train = y.without(held);
    let mut errors = vec![T::zero(); grid.len()];
    if train.observed().is_empty() {
        return Err(SolverError::Input("a fold left no training entries".into()));
    }
    let design = if cov.is_empty() {
        None
    } else {
        Some(Design::new(cov.design_columns(y.rows(), y.cols()), train.observed())?)
    };
    let mut warm: Option<DMatrix<T>> = None;
    for (step, &g) in order.iter().enumerate() {
        let cfg = SolverConfig { lambda: grid[g], continuation: base.continuation && step == 0, ..base.clone() };
        let fit = solve(&train, design.as_ref(), &cfg, warm.as_ref())?;
        errors[g] = held.iter().fold(T::zero(), |acc, &(r, c)| {
            let d = y.values()[(r, c)] - fit.theta_hat[(r, c)];
            acc + d * d
        });
        warm = Some(fit.low_rank);
    }
    Ok(errors)
}

/// Pick λ from `grid` by cross-validated held-out squared error.
///
/// Folds are evaluated in parallel; the result depends only on `opts.seed`.
/// Ties go to the larger λ.
pub fn cross_validate_lambda<T: Scalar>(
    y: &MaskedMatrix<T>,
    cov: &CovariateModel<T>,
    grid: &[T],
    opts: &CvOptions,
    base: &SolverConfig<T>,
) -> Result<CvResult<T>, SolverError> {
    if grid.is_empty() {
        return Err(SolverError::Input("lambda grid is empty".into()));
    }
    if let Some(bad) = grid.iter().find(|g| !g.is_finite_value() || **g < T::zero()) {
        return Err(SolverError::Input(format!("lambda grid contains invalid value {bad}")));
    }
    y.validate_for_solve()?;
    let eligible: Vec<(usize, usize)> = match &opts.holdout {
        Some(h) => {
            if let Some(&(r, c)) = h.iter().find(|&&(r, c)| r >= y.rows() || c >= y.cols() || !y.is_observed(r, c)) {
                return Err(SolverError::Input(format!("holdout entry ({r}, {c}) is not observed")));
            }
            h.clone()
        }
        None => y.observed().to_vec(),
    };
    if opts.folds < 2 || opts.folds > eligible.len() {
        return Err(SolverError::Input(format!(
            "folds must be between 2 and {} (the number of eligible entries), got {}",
            eligible.len(),
            opts.folds
        )));
    }
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].partial_cmp(&grid[a]).expect("finite grid"));

    let folds = assign_folds(&eligible, opts.folds, opts.seed);
    let per_fold: Vec<Vec<T>> =
        folds.par_iter().map(|held| fold_errors(y, cov, &order, grid, held, base)).collect::<Result<_, _>>()?;

    let n_held = T::lit(eligible.len() as f64);
    let table: Vec<(T, T)> = (0..grid.len())
        .map(|g| {
            let total = per_fold.iter().fold(T::zero(), |acc, e| acc + e[g]);
            (grid[g], total / n_held)
        })
        .collect();

    let mut best = 0;
    for g in 1..table.len() {
        let (lam, mse) = table[g];
        let (best_lam, best_mse) = table[best];
        if mse < best_mse || (mse == best_mse && lam > best_lam) {
            best = g;
        }
    }
    Ok(CvResult { lambda_star: table[best].0, table })
}
