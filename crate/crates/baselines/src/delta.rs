//! Delta-method interval for the effect estimate of a log-linear model.

use nalgebra::{DMatrix, DVector};
use tensorcf_causal::PanelDataset;

use crate::design::{DesignRow, NbFit};
use crate::BaselineError;

/// Two-sided 95% standard normal quantile.
pub const Z_975: f64 = 1.959_963_984_540_054;

/// Plug-in effect as a function of the coefficients, over the treated cells
/// with a positive recorded `Y¹`.
#[derive(Debug, Clone)]
pub struct DeltaFunctional {
    /// Feature row of each included cell.
    rows: DMatrix<f64>,
    log_offsets: Vec<f64>,
    y1: Vec<f64>,
    pub n_excluded: usize,
}

impl DeltaFunctional {
    pub fn new(fit: &NbFit, d: &PanelDataset) -> Result<Self, BaselineError> {
        let mut feats = Vec::new();
        let mut log_offsets = Vec::new();
        let mut y1 = Vec::new();
        let mut n_excluded = 0;
        for (i, t) in d.treated_cells() {
            let v = if d.is_recorded(i, t) { d.y_obs[(i, t)] } else { f64::NAN };
            if !v.is_finite() || v == 0.0 {
                n_excluded += 1;
                continue;
            }
            feats.push(fit.design.row(d, DesignRow { unit: i, period: t, outcome: 0 })?);
            log_offsets.push(d.offsets.as_ref().map_or(0.0, |o| o[i].ln()));
            y1.push(v);
        }
        if y1.is_empty() {
            return Err(BaselineError::Input("no treated cell with a positive recorded outcome".into()));
        }
        let p = fit.coefficients.len();
        let rows = DMatrix::from_fn(y1.len(), p, |r, c| feats[r][c]);
        Ok(Self { rows, log_offsets, y1, n_excluded })
    }

    pub fn n_cells(&self) -> usize {
        self.y1.len()
    }

    fn ratios(&self, beta: &DVector<f64>) -> Vec<f64> {
        let eta = &self.rows * beta;
        (0..self.y1.len()).map(|r| (eta[r] + self.log_offsets[r]).exp() / self.y1[r]).collect()
    }

    /// `mean(exp(x β + o) / Y¹) − 1`.
    pub fn value(&self, beta: &DVector<f64>) -> f64 {
        let q = self.ratios(beta);
        q.iter().sum::<f64>() / q.len() as f64 - 1.0
    }

    /// `mean(exp(x β + o) / Y¹ · x)`.
    pub fn gradient(&self, beta: &DVector<f64>) -> DVector<f64> {
        let q = DVector::from_vec(self.ratios(beta));
        self.rows.transpose() * q / self.y1.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaInterval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub std_error: f64,
    /// False when the covariance came from a pseudo-inverse.
    pub reliable: bool,
}

/// 95% normal-approximation interval for the effect estimate.
pub fn delta_method_interval(fit: &NbFit, d: &PanelDataset) -> Result<DeltaInterval, BaselineError> {
    let f = DeltaFunctional::new(fit, d)?;
    let g = f.gradient(&fit.coefficients);
    let var = (g.transpose() * &fit.covariance * &g)[(0, 0)].max(0.0);
    let estimate = f.value(&fit.coefficients);
    let se = var.sqrt();
    if !fit.covariance_reliable {
        log::warn!("coefficient covariance is singular; the delta-method interval is unreliable");
    }
    Ok(DeltaInterval {
        estimate,
        lo: estimate - Z_975 * se,
        hi: estimate + Z_975 * se,
        std_error: se,
        reliable: fit.covariance_reliable && se.is_finite(),
    })
}
