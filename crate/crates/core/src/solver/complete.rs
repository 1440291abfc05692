//! Soft-impute iterations, with optional least-squares covariate blocks.

use nalgebra::DMatrix;

use super::svd::{spectral_norm, svt_with_cap, thin_svd};
use super::{CompletionFit, CovariateFit, MaskedMatrix, SolverConfig, SolverError};
use crate::scalar::Scalar;

/// Ratio between consecutive λ values on a continuation path.
const PATH_RATIO: f64 = 0.25;
/// Smallest path value relative to the starting λ.
const PATH_FLOOR: f64 = 1e-9;
const RANK_TOL: f64 = 1e-8;

/// Least-squares covariate design restricted to the observed entries.
#[derive(Debug, Clone)]
pub(crate) struct Design<T: Scalar> {
    /// Each covariate as a full `rows x cols` matrix.
    pub columns: Vec<DMatrix<T>>,
    /// Pseudo-inverse of the observed-entry design, `p x |O|`.
    pub pinv: DMatrix<T>,
    pub rank: usize,
}

impl<T: Scalar> Design<T> {
    pub fn new(columns: Vec<DMatrix<T>>, observed: &[(usize, usize)]) -> Result<Self, SolverError> {
        let p = columns.len();
        let n = observed.len();
        let x = DMatrix::from_fn(n, p, |row, col| {
            let (r, c) = observed[row];
            columns[col][(r, c)]
        });
        if x.iter().any(|v| !v.is_finite_value()) {
            return Err(SolverError::Input("covariate design has non-finite entries at observed cells".into()));
        }
        let svd = thin_svd(&x, None)?;
        let top = svd.s.first().copied().unwrap_or_else(T::zero);
        let cutoff = T::lit(n.max(p) as f64) * T::eps() * top;
        let rank = svd.s.iter().filter(|&&s| s > cutoff).count();
        let mut pinv = DMatrix::zeros(p, n);
        for (k, &s) in svd.s.iter().enumerate() {
            if s > cutoff {
                let v = svd.vt.row(k).transpose();
                let uk = svd.u.column(k);
                pinv.ger(T::one() / s, &v, &uk, T::one());
            }
        }
        Ok(Self { columns, pinv, rank })
    }

    pub fn rank_deficient(&self) -> bool {
        self.rank < self.columns.len()
    }

    /// Minimum-norm least-squares coefficients for `target` on the observed cells.
    pub fn regress(&self, target: &DMatrix<T>, observed: &[(usize, usize)]) -> Vec<T> {
        let rhs = nalgebra::DVector::from_iterator(observed.len(), observed.iter().map(|&(r, c)| target[(r, c)]));
        (&self.pinv * rhs).iter().copied().collect()
    }

    pub fn combine(&self, coef: &[T], rows: usize, cols: usize) -> DMatrix<T> {
        let mut out = DMatrix::zeros(rows, cols);
        for (col, &b) in self.columns.iter().zip(coef) {
            out.zip_apply(col, |o, x| *o += b * x);
        }
        out
    }
}

struct StageState<T: Scalar> {
    low_rank: DMatrix<T>,
    singular_values: Vec<T>,
    coef: Vec<T>,
    trace: Vec<T>,
    iterations: usize,
    converged: bool,
}

fn observed_loss<T: Scalar>(y: &MaskedMatrix<T>, low_rank: &DMatrix<T>, cov: Option<&DMatrix<T>>) -> T {
    let half = T::lit(0.5);
    y.observed().iter().fold(T::zero(), |acc, &(r, c)| {
        let mut resid = y.values()[(r, c)] - low_rank[(r, c)];
        if let Some(cov) = cov {
            resid -= cov[(r, c)];
        }
        acc + half * resid * resid
    })
}

fn run_stage<T: Scalar>(
    y: &MaskedMatrix<T>,
    design: Option<&Design<T>>,
    lambda: T,
    cfg: &SolverConfig<T>,
    low_rank: DMatrix<T>,
    coef: Vec<T>,
) -> Result<StageState<T>, SolverError> {
    let (rows, cols) = (y.rows(), y.cols());
    let mut state =
        StageState { low_rank, singular_values: Vec::new(), coef, trace: Vec::new(), iterations: 0, converged: false };
    let mut cov = design.map(|d| d.combine(&state.coef, rows, cols));
    let tiny = T::lit(1e-30);
    let mut previous: Option<T> = None;

    for _ in 0..cfg.max_iters {
        let filled = DMatrix::from_fn(rows, cols, |r, c| {
            if y.is_observed(r, c) {
                match &cov {
                    Some(cov) => y.values()[(r, c)] - cov[(r, c)],
                    None => y.values()[(r, c)],
                }
            } else {
                state.low_rank[(r, c)]
            }
        });
        let shrunk = svt_with_cap(&filled, lambda, cfg.svd_rank_cap)?;
        let penalty = lambda * shrunk.nuclear_norm();
        state.low_rank = shrunk.matrix;
        state.singular_values = shrunk.singular_values;

        if let Some(design) = design {
            let target = y.values() - &state.low_rank;
            state.coef = design.regress(&target, y.observed());
            cov = Some(design.combine(&state.coef, rows, cols));
        }

        let objective = observed_loss(y, &state.low_rank, cov.as_ref()) + penalty;
        if !objective.is_finite_value() {
            return Err(SolverError::Numerical("objective became non-finite".into()));
        }
        state.trace.push(objective);
        state.iterations += 1;
        if let Some(prev) = previous {
            let scale = if prev.abs() > tiny { prev.abs() } else { tiny };
            if (prev - objective).abs() <= cfg.tol * scale {
                state.converged = true;
                break;
            }
        }
        previous = Some(objective);
    }
    Ok(state)
}

/// Decreasing λ values from `lambda_max` down to `lambda`, ending exactly at `lambda`.
pub fn continuation_path<T: Scalar>(lambda_max: T, lambda: T) -> Vec<T> {
    if !(lambda_max > lambda) || lambda_max <= T::zero() {
        return vec![lambda];
    }
    let floor_rel = T::lit(PATH_FLOOR);
    let floor = if lambda > floor_rel * lambda_max { lambda } else { floor_rel * lambda_max };
    let span = (lambda_max / floor).ln();
    let steps = (span / (T::one() / T::lit(PATH_RATIO)).ln()).ceil().to_f64_lossy().max(1.0) as usize;
    let mut path: Vec<T> =
        (1..=steps).map(|l| lambda_max * (floor / lambda_max).powf(T::lit(l as f64 / steps as f64))).collect();
    if floor == lambda {
        *path.last_mut().expect("nonempty path") = lambda;
    } else {
        path.push(lambda);
    }
    path
}

pub(crate) fn solve<T: Scalar>(
    y: &MaskedMatrix<T>,
    design: Option<&Design<T>>,
    cfg: &SolverConfig<T>,
    warm: Option<&DMatrix<T>>,
) -> Result<CompletionFit<T>, SolverError> {
    cfg.validate()?;
    y.validate_for_solve()?;
    let (rows, cols) = (y.rows(), y.cols());
    if let Some(w) = warm {
        if w.shape() != (rows, cols) {
            return Err(SolverError::Input("warm start has the wrong shape".into()));
        }
    }

    let coef0 = match design {
        Some(d) => d.regress(y.values(), y.observed()),
        None => Vec::new(),
    };
    let path = if cfg.continuation {
        let residual = match design {
            Some(d) => {
                let cov = d.combine(&coef0, rows, cols);
                MaskedMatrix::from_mask(y.values() - cov, y.mask().clone())?.zero_filled()
            }
            None => y.zero_filled(),
        };
        continuation_path(spectral_norm(&residual)?, cfg.lambda)
    } else {
        vec![cfg.lambda]
    };

    let mut low_rank = warm.cloned().unwrap_or_else(|| DMatrix::zeros(rows, cols));
    let mut coef = coef0;
    let mut total_iters = 0;
    let mut last = None;
    for &lambda in &path {
        let state = run_stage(y, design, lambda, cfg, low_rank, coef)?;
        total_iters += state.iterations;
        low_rank = state.low_rank.clone();
        coef = state.coef.clone();
        last = Some(state);
    }
    let state = last.expect("path is nonempty");

    let top = state.singular_values.first().copied().unwrap_or_else(T::zero);
    let rank_hat = state.singular_values.iter().filter(|&&s| top > T::zero() && s > T::lit(RANK_TOL) * top).count();

    let (theta_hat, covariates) = match design {
        Some(d) => {
            let part = d.combine(&state.coef, rows, cols);
            let theta = &state.low_rank + &part;
            (
                theta,
                Some(CovariateFit {
                    coefficients: state.coef.clone(),
                    b_hat: None,
                    unit_time_coefficients: Vec::new(),
                    covariate_part: part,
                    design_rank: d.rank,
                    rank_deficient: d.rank_deficient(),
                }),
            )
        }
        None => (state.low_rank.clone(), None),
    };

    Ok(CompletionFit {
        theta_hat,
        low_rank: state.low_rank,
        objective_trace: state.trace,
        rank_hat,
        singular_values: state.singular_values,
        iterations: total_iters,
        converged: state.converged,
        covariates,
    })
}

/// Complete `y` by soft-impute from a zero start.
pub fn complete<T: Scalar>(y: &MaskedMatrix<T>, cfg: &SolverConfig<T>) -> Result<CompletionFit<T>, SolverError> {
    solve(y, None, cfg, None)
}

/// Complete `y` starting from `warm` (e.g. the solution at a larger λ).
pub fn complete_warm<T: Scalar>(
    y: &MaskedMatrix<T>,
    cfg: &SolverConfig<T>,
    warm: Option<&DMatrix<T>>,
) -> Result<CompletionFit<T>, SolverError> {
    solve(y, None, cfg, warm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn low_rank(rows: usize, cols: usize, rank: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(rows, rank, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let b = DMatrix::from_fn(rank, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        a * b
    }

    #[test]
    fn fully_observed_zero_lambda_returns_input() {
        let y = low_rank(6, 5, 5, 1);
        let fit = complete(&MaskedMatrix::fully_observed(y.clone()), &SolverConfig::default()).unwrap();
        assert_eq!(fit.theta_hat, y);
        assert!(fit.converged);
    }

    #[test]
    fn empty_or_non_finite_observations_rejected() {
        let y = MaskedMatrix::new(DMatrix::<f64>::zeros(2, 2), vec![]).unwrap();
        assert!(matches!(complete(&y, &SolverConfig::default()), Err(SolverError::Input(_))));
        let v = DMatrix::from_row_slice(1, 2, &[1.0, f64::NAN]);
        let y = MaskedMatrix::new(v, vec![(0, 0), (0, 1)]).unwrap();
        assert!(matches!(complete(&y, &SolverConfig::default()), Err(SolverError::Input(_))));
    }

    #[test]
    fn rank_one_single_missing_entry_recovered() {
        let u = [1.0_f64, 2.0, -1.5, 0.5];
        let v = [2.0, -1.0, 3.0];
        let y = DMatrix::from_fn(4, 3, |i, j| u[i] * v[j]);
        let observed: Vec<_> = (0..3).flat_map(|j| (0..4).map(move |i| (i, j))).filter(|&p| p != (2, 1)).collect();
        let cfg = SolverConfig { lambda: 0.0, tol: 1e-12, max_iters: 5000, continuation: true, ..Default::default() };
        let fit = complete(&MaskedMatrix::new(y.clone(), observed).unwrap(), &cfg).unwrap();
        let truth = u[2] * v[1];
        assert!(((fit.theta_hat[(2, 1)] - truth) / truth).abs() < 1e-6, "{}", fit.theta_hat[(2, 1)]);
    }

    #[test]
    fn large_lambda_gives_zero() {
        let y = low_rank(8, 6, 2, 3);
        let mask = DMatrix::from_fn(8, 6, |i, j| (i + j) % 3 != 0);
        let m = MaskedMatrix::from_mask(y, mask).unwrap();
        let op = spectral_norm(&m.zero_filled()).unwrap();
        let fit = complete(&m, &SolverConfig::with_lambda(op * 1.0001)).unwrap();
        assert!(fit.theta_hat.iter().all(|&v| v == 0.0));
        assert_eq!(fit.rank_hat, 0);
    }

    #[test]
    fn objective_trace_monotone() {
        let y = low_rank(20, 12, 3, 4) + DMatrix::from_fn(20, 12, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.01);
        let mask = DMatrix::from_fn(20, 12, |i, j| (i * 5 + j) % 4 != 0);
        let m = MaskedMatrix::from_mask(y, mask).unwrap();
        let fit = complete(&m, &SolverConfig::with_lambda(0.3)).unwrap();
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10 * w[0].abs().max(1.0));
        }
    }

    #[test]
    fn continuation_path_shape() {
        let path = continuation_path(10.0f64, 0.1);
        assert_eq!(*path.last().unwrap(), 0.1);
        assert!(path.windows(2).all(|w| w[1] < w[0]));
        assert!(path[0] < 10.0);
        assert_eq!(continuation_path(1.0f64, 2.0), vec![2.0]);
        let to_zero = continuation_path(1.0f64, 0.0);
        assert_eq!(*to_zero.last().unwrap(), 0.0);
        assert!((to_zero[to_zero.len() - 2] - 1e-9).abs() < 1e-20);
    }

    #[test]
    fn unobserved_row_extrapolates_without_error() {
        let y = low_rank(6, 5, 1, 9);
        let mask = DMatrix::from_fn(6, 5, |i, _| i != 2);
        let fit = complete(&MaskedMatrix::from_mask(y, mask).unwrap(), &SolverConfig::with_lambda(0.01)).unwrap();
        assert!(fit.theta_hat.iter().all(|v| v.is_finite()));
    }
}
