//! Imputation of untreated outcomes by low-rank completion.

use nalgebra::DMatrix;
use tensorcf::solver::{default_folds, default_lambda_grid, CvOptions};
use tensorcf::{
    complete_with_covariates, cross_validate_lambda, unfold, CompletionFit, CovariateModel, CvResult, MaskedMatrix,
    Mode, SolverConfig, Tensor3,
};

use crate::panel::{assemble_tensor, PanelDataset};
use crate::CausalError;

/// Which outcomes enter the completion problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompletionMethod {
    /// Mode-1 unfolding of the full outcome tensor (primary plus controls).
    Tensor,
    /// Primary outcome only, with the panel's covariates.
    Matrix1,
    /// Primary outcome only; transformed controls join the covariates.
    Matrix2,
}

impl CompletionMethod {
    pub fn label(self) -> &'static str {
        match self {
            CompletionMethod::Tensor => "TC",
            CompletionMethod::Matrix1 => "MC1",
            CompletionMethod::Matrix2 => "MC2",
        }
    }
}

/// Fit quality on the transform scale, over cells where `Y⁰` is observed.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// NaN when no untreated cell is observed.
    pub in_sample_mse: f64,
    pub out_of_sample_mse: Option<f64>,
    /// Absolute percentage errors at imputed cells; filled when the truth is known.
    pub mape_per_cell: Vec<f64>,
}

/// Completion problem built from a panel: the mode-1 unfolding with its
/// mask, the covariate blocks, and the per-unit offsets.
#[derive(Debug, Clone)]
pub struct CompletionProblem {
    pub method: CompletionMethod,
    pub y: MaskedMatrix<f64>,
    pub covariates: CovariateModel<f64>,
    /// `log n_i`, subtracted from the primary layer before fitting.
    pub log_offsets: Option<Vec<f64>>,
    pub(crate) n_periods: usize,
}

fn pad_columns(m: &DMatrix<f64>, width: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), width, |r, c| if c < m.ncols() { m[(r, c)] } else { 0.0 })
}

impl CompletionProblem {
    pub fn build(d: &PanelDataset, method: CompletionMethod) -> Result<Self, CausalError> {
        let (tensor, missing) = assemble_tensor(d)?;
        let (n, t) = (d.n_units(), d.n_periods());
        let layers = match method {
            CompletionMethod::Tensor => d.n_outcomes(),
            CompletionMethod::Matrix1 | CompletionMethod::Matrix2 => 1,
        };
        let tensor = if layers == tensor.dims()[2] {
            tensor
        } else {
            Tensor3::from_vec([n, t, layers], tensor.as_slice()[..n * t * layers].to_vec())?
        };
        let mut values = unfold(&tensor, Mode::One).matrix;
        let mut mask = DMatrix::from_element(n, t * layers, true);
        for &(i, p, layer) in &missing {
            if layer < layers {
                mask[(i, p + t * layer)] = false;
            }
        }
        let log_offsets = d.offsets.as_ref().map(|o| o.iter().map(|v| v.ln()).collect::<Vec<_>>());
        if let Some(off) = &log_offsets {
            for p in 0..t {
                for (i, o) in off.iter().enumerate() {
                    values[(i, p)] -= o;
                }
            }
        }

        let width = t * layers;
        let cov = &d.covariates;
        let mut model = CovariateModel::default();
        if cov.unit.is_some() || cov.time.is_some() {
            model.unit_covariates = cov.unit.clone();
            let x_t = cov.time.clone().unwrap_or_else(|| DMatrix::identity(t, t));
            model.time_covariates = Some(pad_columns(&x_t, width));
        }
        for c in &cov.unit_time {
            model.unit_time.push(pad_columns(&c.values, width));
        }
        if method == CompletionMethod::Matrix2 {
            for c in &d.controls {
                model.unit_time.push(control_covariate(d, c));
            }
        }
        Ok(Self { method, y: MaskedMatrix::from_mask(values, mask)?, covariates: model, log_offsets, n_periods: t })
    }

    /// Observed primary-layer cells, the ones cross-validation holds out.
    pub fn primary_observed(&self) -> Vec<(usize, usize)> {
        self.y.observed().iter().copied().filter(|&(_, c)| c < self.n_periods).collect()
    }

    pub fn solve(&self, cfg: &SolverConfig<f64>) -> Result<CompletionFit<f64>, CausalError> {
        Ok(complete_with_covariates(&self.y, &self.covariates, cfg)?)
    }

    /// Fitted primary layer on the transform scale, offsets added back.
    pub fn primary_scale(&self, fit: &CompletionFit<f64>) -> DMatrix<f64> {
        let n = self.y.rows();
        DMatrix::from_fn(n, self.n_periods, |i, p| {
            fit.theta_hat[(i, p)] + self.log_offsets.as_ref().map_or(0.0, |o| o[i])
        })
    }

    /// Transform-scale primary layer as observed, offsets added back.
    pub fn primary_observed_scale(&self, i: usize, p: usize) -> f64 {
        self.y.values()[(i, p)] + self.log_offsets.as_ref().map_or(0.0, |o| o[i])
    }

    /// Mean squared error at observed primary cells on the transform scale.
    pub fn in_sample_mse(&self, fit: &CompletionFit<f64>) -> f64 {
        let cells = self.primary_observed();
        if cells.is_empty() {
            return f64::NAN;
        }
        let total: f64 = cells.iter().map(|&(i, p)| (self.y.values()[(i, p)] - fit.theta_hat[(i, p)]).powi(2)).sum();
        total / cells.len() as f64
    }

    /// Cross-validated error at observed primary cells for each λ in `grid`.
    pub fn cross_validate(
        &self,
        grid: Option<&[f64]>,
        folds: Option<usize>,
        seed: u64,
        base: &SolverConfig<f64>,
    ) -> Result<CvResult<f64>, CausalError> {
        let holdout = self.primary_observed();
        let default_grid;
        let grid = match grid {
            Some(g) => g,
            None => {
                default_grid = default_lambda_grid(&self.y)?;
                &default_grid
            }
        };
        let folds = folds.unwrap_or_else(|| default_folds(self.y.rows() * self.y.cols(), holdout.len()));
        let opts = CvOptions { folds, seed, holdout: Some(holdout) };
        Ok(cross_validate_lambda(&self.y, &self.covariates, grid, &opts, base)?)
    }
}

/// Control outcome as a primary-layer covariate. Gaps take the period mean
/// of the recorded values.
fn control_covariate(d: &PanelDataset, c: &crate::panel::ControlOutcome) -> DMatrix<f64> {
    let (n, t) = (d.n_units(), d.n_periods());
    let mut out = DMatrix::zeros(n, t);
    for p in 0..t {
        let recorded: Vec<usize> = (0..n).filter(|&i| !c.is_missing(i, p)).collect();
        let mean = if recorded.is_empty() {
            0.0
        } else {
            recorded.iter().map(|&i| d.transform.forward(c.values[(i, p)])).sum::<f64>() / recorded.len() as f64
        };
        if recorded.len() < n {
            log::warn!("control '{}' has gaps in period {}; filling with the period mean", c.name, d.periods[p]);
        }
        for i in 0..n {
            out[(i, p)] = if c.is_missing(i, p) { mean } else { d.transform.forward(c.values[(i, p)]) };
        }
    }
    out
}

/// Imputed untreated outcomes with the underlying fit.
#[derive(Debug, Clone)]
pub struct Imputation {
    pub method: CompletionMethod,
    /// `Ŷ⁰` on the count scale for every cell.
    pub y0_hat: DMatrix<f64>,
    /// `Ŷ⁰` on the transform scale.
    pub y0_scale: DMatrix<f64>,
    pub fit: CompletionFit<f64>,
    pub diagnostics: Diagnostics,
}

/// Impute `Y⁰` for every cell with the chosen completion method.
pub fn impute_with(
    d: &PanelDataset,
    method: CompletionMethod,
    cfg: &SolverConfig<f64>,
) -> Result<Imputation, CausalError> {
    let problem = CompletionProblem::build(d, method)?;
    let fit = problem.solve(cfg)?;
    let y0_scale = problem.primary_scale(&fit);
    let y0_hat = y0_scale.map(|v| d.transform.inverse(v));
    let diagnostics =
        Diagnostics { in_sample_mse: problem.in_sample_mse(&fit), out_of_sample_mse: None, mape_per_cell: Vec::new() };
    Ok(Imputation { method, y0_hat, y0_scale, fit, diagnostics })
}

/// Tensor-completion imputation of `Y⁰`.
pub fn impute_counterfactuals(d: &PanelDataset, cfg: &SolverConfig<f64>) -> Result<Imputation, CausalError> {
    impute_with(d, CompletionMethod::Tensor, cfg)
}

/// Cross-validated error of a fixed configuration on the observed `Y⁰` cells.
pub fn out_of_sample_mse(
    d: &PanelDataset,
    method: CompletionMethod,
    cfg: &SolverConfig<f64>,
    folds: Option<usize>,
    seed: u64,
) -> Result<f64, CausalError> {
    let problem = CompletionProblem::build(d, method)?;
    let res = problem.cross_validate(Some(&[cfg.lambda]), folds, seed, cfg)?;
    Ok(res.table[0].1)
}

/// Choose λ by cross-validation on the observed `Y⁰` cells.
pub fn select_lambda(
    d: &PanelDataset,
    method: CompletionMethod,
    grid: Option<&[f64]>,
    folds: Option<usize>,
    seed: u64,
    base: &SolverConfig<f64>,
) -> Result<CvResult<f64>, CausalError> {
    CompletionProblem::build(d, method)?.cross_validate(grid, folds, seed, base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{ControlOutcome, NamedMatrix, Transform};

    fn rank_one_panel() -> PanelDataset {
        let y = DMatrix::from_fn(6, 4, |i, t| ((1.0 + 0.2 * i as f64) * (2.0 + 0.3 * t as f64)).exp_m1());
        let w = DMatrix::from_fn(6, 4, |i, t| i == 5 && t == 3);
        let z = DMatrix::from_fn(6, 4, |i, t| ((1.0 + 0.2 * i as f64) * (1.0 + 0.5 * t as f64)).exp_m1());
        PanelDataset::new(y, w).unwrap().with_control(ControlOutcome::new("z", z))
    }

    #[test]
    fn unfolding_layout_and_mask() {
        let d = rank_one_panel();
        let p = CompletionProblem::build(&d, CompletionMethod::Tensor).unwrap();
        assert_eq!((p.y.rows(), p.y.cols()), (6, 8));
        assert!(!p.y.is_observed(5, 3));
        assert!(p.y.is_observed(5, 7));
        assert!((p.y.values()[(2, 5)] - d.controls[0].values[(2, 1)].ln_1p()).abs() < 1e-12);
        assert_eq!(p.primary_observed().len(), 23);
        let m = CompletionProblem::build(&d, CompletionMethod::Matrix1).unwrap();
        assert_eq!(m.y.cols(), 4);
    }

    #[test]
    fn no_treated_cells_gives_defined_diagnostics() {
        let mut d = rank_one_panel();
        d.w = DMatrix::from_element(6, 4, false);
        let imp = impute_counterfactuals(&d, &SolverConfig::with_lambda(0.1)).unwrap();
        assert!(imp.diagnostics.in_sample_mse.is_finite());
        assert!(imp.y0_hat.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn all_treated_still_runs_on_controls() {
        let mut d = rank_one_panel();
        d.w = DMatrix::from_element(6, 4, true);
        let imp = impute_counterfactuals(&d, &SolverConfig::with_lambda(0.1)).unwrap();
        assert!(imp.diagnostics.in_sample_mse.is_nan());
        assert!(imp.y0_hat.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn offsets_shift_the_primary_layer_only() {
        let mut d = rank_one_panel();
        d.offsets = Some(vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0]);
        let p = CompletionProblem::build(&d, CompletionMethod::Tensor).unwrap();
        let raw = d.y_obs[(1, 0)].ln_1p();
        assert!((p.y.values()[(1, 0)] - (raw - 20f64.ln())).abs() < 1e-12);
        assert!((p.y.values()[(1, 4)] - d.controls[0].values[(1, 0)].ln_1p()).abs() < 1e-12);
        assert!((p.primary_observed_scale(1, 0) - raw).abs() < 1e-12);
    }

    #[test]
    fn covariates_are_padded_to_the_primary_layer() {
        let mut d = rank_one_panel();
        d.covariates.unit_time.push(NamedMatrix { name: "x".into(), values: DMatrix::from_element(6, 4, 1.0) });
        d.covariates.unit = Some(DMatrix::from_element(6, 1, 1.0));
        let p = CompletionProblem::build(&d, CompletionMethod::Tensor).unwrap();
        let x_t = p.covariates.time_covariates.as_ref().unwrap();
        assert_eq!(x_t.shape(), (4, 8));
        assert_eq!(x_t.columns(4, 4).iter().filter(|&&v| v != 0.0).count(), 0);
        assert_eq!(p.covariates.unit_time[0].columns(4, 4).sum(), 0.0);
        let m2 = CompletionProblem::build(&d, CompletionMethod::Matrix2).unwrap();
        assert_eq!(m2.covariates.unit_time.len(), 2);
    }

    #[test]
    fn matrix2_with_identical_control_fits_nearly_exactly() {
        let y = DMatrix::from_fn(8, 5, |i, t| (((i * 7 + t * 3) % 11) as f64 * 3.0 + 1.0).round());
        let w = DMatrix::from_fn(8, 5, |i, t| (i + t) % 6 == 0);
        let d = PanelDataset::new(y.clone(), w).unwrap().with_control(ControlOutcome::new("z", y));
        let cfg = SolverConfig::with_lambda(50.0);
        let oos = out_of_sample_mse(&d, CompletionMethod::Matrix2, &cfg, Some(5), 3).unwrap();
        assert!(oos < 1e-10, "{oos}");
    }

    #[test]
    fn constant_data_same_under_both_transforms() {
        let y = DMatrix::from_element(5, 4, 7.0);
        let w = DMatrix::from_fn(5, 4, |i, t| i == t);
        let d = PanelDataset::new(y, w).unwrap();
        let cfg = SolverConfig { lambda: 0.0, continuation: true, tol: 1e-12, max_iters: 5000, ..Default::default() };
        let a = impute_counterfactuals(&d, &cfg).unwrap();
        let b = impute_counterfactuals(&d.clone().with_transform(Transform::Identity), &cfg).unwrap();
        for &(i, t) in &d.treated_cells() {
            assert!((a.y0_hat[(i, t)] - 7.0).abs() < 1e-6);
            assert!((b.y0_hat[(i, t)] - 7.0).abs() < 1e-6);
        }
    }
}
