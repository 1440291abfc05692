//! Completion with an unpenalized covariate term `X_N · B · X_T + Σ β_j U_j`.

use nalgebra::DMatrix;

use super::complete::{solve, Design};
use super::{complete, CompletionFit, MaskedMatrix, SolverConfig, SolverError};
use crate::scalar::Scalar;

/// Covariate blocks for the outcome matrix.
///
/// When only one of `unit_covariates` / `time_covariates` is given the other
/// defaults to the identity. When both are absent there is no `B` term.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateModel<T: Scalar> {
    /// `rows x d_N` unit-specific covariates.
    pub unit_covariates: Option<DMatrix<T>>,
    /// `d_T x cols` time-specific covariates.
    pub time_covariates: Option<DMatrix<T>>,
    /// Full `rows x cols` covariates, each with a scalar coefficient.
    pub unit_time: Vec<DMatrix<T>>,
}

impl<T: Scalar> Default for CovariateModel<T> {
    fn default() -> Self {
        Self { unit_covariates: None, time_covariates: None, unit_time: Vec::new() }
    }
}

/// Estimated covariate coefficients.
#[derive(Debug, Clone)]
pub struct CovariateFit<T: Scalar> {
    /// All coefficients in design order: `vec(B)` (column-major) then unit-time terms.
    pub coefficients: Vec<T>,
    pub b_hat: Option<DMatrix<T>>,
    pub unit_time_coefficients: Vec<T>,
    /// Fitted covariate contribution, `rows x cols`.
    pub covariate_part: DMatrix<T>,
    pub design_rank: usize,
    /// The design was rank deficient; coefficients are the minimum-norm solution.
    pub rank_deficient: bool,
}

impl<T: Scalar> CovariateModel<T> {
    pub fn is_empty(&self) -> bool {
        self.unit_covariates.is_none() && self.time_covariates.is_none() && self.unit_time.is_empty()
    }

    pub fn with_unit_time(mut self, m: DMatrix<T>) -> Self {
        self.unit_time.push(m);
        self
    }

    fn has_b_term(&self) -> bool {
        self.unit_covariates.is_some() || self.time_covariates.is_some()
    }

    /// Shape of `B` for an outcome matrix with `rows x cols`.
    fn b_shape(&self, rows: usize, cols: usize) -> (usize, usize) {
        let d_n = self.unit_covariates.as_ref().map_or(rows, |x| x.ncols());
        let d_t = self.time_covariates.as_ref().map_or(cols, |x| x.nrows());
        (d_n, d_t)
    }

    fn check_shapes(&self, rows: usize, cols: usize) -> Result<(), SolverError> {
        if let Some(x) = &self.unit_covariates {
            if x.nrows() != rows || x.ncols() == 0 {
                return Err(SolverError::Input(format!(
                    "unit covariates are {}x{}, expected {rows} rows",
                    x.nrows(),
                    x.ncols()
                )));
            }
        }
        if let Some(x) = &self.time_covariates {
            if x.ncols() != cols || x.nrows() == 0 {
                return Err(SolverError::Input(format!(
                    "time covariates are {}x{}, expected {cols} columns",
                    x.nrows(),
                    x.ncols()
                )));
            }
        }
        if let Some(m) = self.unit_time.iter().find(|m| m.shape() != (rows, cols)) {
            return Err(SolverError::Input(format!(
                "unit-time covariate is {}x{}, expected {rows}x{cols}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(())
    }

    /// Design columns as full matrices, `vec(B)` first.
    pub(crate) fn design_columns(&self, rows: usize, cols: usize) -> Vec<DMatrix<T>> {
        let mut columns = Vec::new();
        if self.has_b_term() {
            let x_n = self.unit_covariates.clone().unwrap_or_else(|| DMatrix::identity(rows, rows));
            let x_t = self.time_covariates.clone().unwrap_or_else(|| DMatrix::identity(cols, cols));
            for b in 0..x_t.nrows() {
                for a in 0..x_n.ncols() {
                    columns.push(x_n.column(a) * x_t.row(b));
                }
            }
        }
        columns.extend(self.unit_time.iter().cloned());
        columns
    }
}

/// Jointly fit a low-rank matrix and covariate coefficients.
///
/// Alternates a least-squares update of the coefficients on the observed
/// residual with one soft-impute step on the covariate-adjusted residual.
/// With no covariates this is exactly [`complete`].
pub fn complete_with_covariates<T: Scalar>(
    y: &MaskedMatrix<T>,
    cov: &CovariateModel<T>,
    cfg: &SolverConfig<T>,
) -> Result<CompletionFit<T>, SolverError> {
    if cov.is_empty() {
        return complete(y, cfg);
    }
    cfg.validate()?;
    y.validate_for_solve()?;
    let (rows, cols) = (y.rows(), y.cols());
    cov.check_shapes(rows, cols)?;
    let design = Design::new(cov.design_columns(rows, cols), y.observed())?;
    if design.rank_deficient() {
        log::warn!(
            "covariate design is rank deficient ({} of {} columns); using minimum-norm coefficients",
            design.rank,
            design.columns.len()
        );
    }
    let mut fit = solve(y, Some(&design), cfg, None)?;
    if let Some(cf) = fit.covariates.as_mut() {
        let n_b = if cov.has_b_term() {
            let (d_n, d_t) = cov.b_shape(rows, cols);
            cf.b_hat = Some(DMatrix::from_column_slice(d_n, d_t, &cf.coefficients[..d_n * d_t]));
            d_n * d_t
        } else {
            0
        };
        cf.unit_time_coefficients = cf.coefficients[n_b..].to_vec();
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_covariates_reduce_to_plain_completion() {
        let y = DMatrix::from_fn(5, 4, |i, j| (i as f64 + 1.0) * (j as f64 - 1.5) + 0.1 * (i * j) as f64);
        let mask = DMatrix::from_fn(5, 4, |i, j| (i + 2 * j) % 3 != 0);
        let m = MaskedMatrix::from_mask(y, mask).unwrap();
        let cfg = SolverConfig::with_lambda(0.2);
        let a = complete(&m, &cfg).unwrap();
        let b = complete_with_covariates(&m, &CovariateModel::default(), &cfg).unwrap();
        assert_eq!(a.theta_hat, b.theta_hat);
        assert_eq!(a.objective_trace, b.objective_trace);
    }

    #[test]
    fn exact_covariate_signal_recovered() {
        let (n, t) = (12, 7);
        let x_n = DMatrix::from_fn(n, 2, |i, a| if a == 0 { 1.0 } else { (i as f64).sin() });
        let x_t = DMatrix::from_fn(2, t, |b, j| if b == 0 { 1.0 } else { (j as f64 * 0.7).cos() });
        let b_star = DMatrix::from_row_slice(2, 2, &[0.5, -1.25, 2.0, 0.75]);
        let y = &x_n * &b_star * &x_t;
        let mask = DMatrix::from_fn(n, t, |i, j| (i + j) % 4 != 1);
        let m = MaskedMatrix::from_mask(y, mask).unwrap();
        let cov = CovariateModel { unit_covariates: Some(x_n), time_covariates: Some(x_t), unit_time: vec![] };
        let fit = complete_with_covariates(&m, &cov, &SolverConfig::with_lambda(1e3)).unwrap();
        let cf = fit.covariates.as_ref().unwrap();
        assert!((cf.b_hat.as_ref().unwrap() - &b_star).abs().max() < 1e-8);
        assert!(fit.low_rank.abs().max() < 1e-8);
        assert!(!cf.rank_deficient);
    }

    #[test]
    fn constant_unit_time_covariate_is_an_intercept() {
        let c = 3.25_f64;
        let y = DMatrix::from_element(6, 5, c);
        let mask = DMatrix::from_fn(6, 5, |i, j| (i + j) % 2 == 0);
        let m = MaskedMatrix::from_mask(y, mask).unwrap();
        let cov = CovariateModel::default().with_unit_time(DMatrix::from_element(6, 5, 1.0));
        let fit = complete_with_covariates(&m, &cov, &SolverConfig::with_lambda(100.0)).unwrap();
        let cf = fit.covariates.unwrap();
        assert!((cf.unit_time_coefficients[0] - c).abs() < 1e-10);
        assert!(fit.theta_hat.iter().all(|v| (v - c).abs() < 1e-10));
    }

    #[test]
    fn rank_deficient_design_flagged() {
        let y = DMatrix::from_fn(4, 4, |i, j| (i + j) as f64);
        let ones = DMatrix::from_element(4, 4, 1.0);
        let cov = CovariateModel::default().with_unit_time(ones.clone()).with_unit_time(ones * 2.0);
        let fit =
            complete_with_covariates(&MaskedMatrix::fully_observed(y), &cov, &SolverConfig::with_lambda(0.5)).unwrap();
        let cf = fit.covariates.unwrap();
        assert!(cf.rank_deficient);
        assert_eq!(cf.design_rank, 1);
        // Minimum-norm split: coefficient on the doubled column is twice the other.
        assert!((cf.unit_time_coefficients[1] - 2.0 * cf.unit_time_coefficients[0]).abs() < 1e-10);
    }

    #[test]
    fn shape_errors() {
        let m = MaskedMatrix::fully_observed(DMatrix::<f64>::zeros(3, 3));
        let cov = CovariateModel::default().with_unit_time(DMatrix::zeros(2, 3));
        assert!(matches!(complete_with_covariates(&m, &cov, &SolverConfig::default()), Err(SolverError::Input(_))));
    }

    #[test]
    fn joint_objective_nonincreasing() {
        let (n, t) = (10, 6);
        let y = DMatrix::from_fn(n, t, |i, j| ((i * 3 + j * 5) % 7) as f64 + 0.3 * i as f64);
        let mask = DMatrix::from_fn(n, t, |i, j| (i * 2 + j) % 5 != 0);
        let m = MaskedMatrix::from_mask(y, mask).unwrap();
        let cov = CovariateModel {
            unit_covariates: None,
            time_covariates: Some(DMatrix::from_fn(1, t, |_, j| j as f64)),
            unit_time: vec![DMatrix::from_fn(n, t, |i, j| ((i + j) as f64).sqrt())],
        };
        let fit = complete_with_covariates(&m, &cov, &SolverConfig::with_lambda(0.8)).unwrap();
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10 * w[0].abs().max(1.0));
        }
    }
}
