//! Average relative effect of treatment on the treated cells.

use nalgebra::DMatrix;

use crate::CausalError;

#[derive(Debug, Clone, PartialEq)]
pub struct CellEffect {
    pub unit: usize,
    pub period: usize,
    pub y1_obs: f64,
    pub y0_imputed: f64,
    /// `(Ŷ⁰ − Y¹) / Y¹`.
    pub relative_effect: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectEstimate {
    pub delta_hat: f64,
    /// Number of treated cells, including excluded ones.
    pub n_treated: usize,
    /// Treated cells left out because `Y¹` is zero or unrecorded.
    pub n_excluded: usize,
    pub per_cell: Vec<CellEffect>,
    /// 95% interval, once one has been computed.
    pub interval: Option<(f64, f64)>,
    pub bootstrap_draws: Vec<f64>,
}

/// Mean of `(Ŷ⁰ − Y¹)/Y¹` over treated cells.
///
/// Cells with `Y¹ = 0` (undefined ratio) or a non-finite `Y¹` (no record) are
/// excluded and counted in `n_excluded`.
pub fn estimate_delta(
    y1_obs: &DMatrix<f64>,
    y0_hat: &DMatrix<f64>,
    w: &DMatrix<bool>,
) -> Result<EffectEstimate, CausalError> {
    if y1_obs.shape() != w.shape() || y0_hat.shape() != w.shape() {
        return Err(CausalError::Input(format!(
            "shape mismatch: Y1 {:?}, Y0 {:?}, W {:?}",
            y1_obs.shape(),
            y0_hat.shape(),
            w.shape()
        )));
    }
    let mut per_cell = Vec::new();
    let mut n_treated = 0;
    let mut n_excluded = 0;
    for period in 0..w.ncols() {
        for unit in 0..w.nrows() {
            if !w[(unit, period)] {
                continue;
            }
            n_treated += 1;
            let y1 = y1_obs[(unit, period)];
            let y0 = y0_hat[(unit, period)];
            if !y1.is_finite() || y1 == 0.0 {
                n_excluded += 1;
                continue;
            }
            if !y0.is_finite() {
                return Err(CausalError::Numerical(format!("non-finite imputation at unit {unit}, period {period}")));
            }
            per_cell.push(CellEffect { unit, period, y1_obs: y1, y0_imputed: y0, relative_effect: (y0 - y1) / y1 });
        }
    }
    if n_excluded > 0 {
        log::warn!("{n_excluded} of {n_treated} treated cells excluded (zero or unrecorded outcome)");
    }
    if per_cell.is_empty() {
        return Err(CausalError::Input(if n_treated == 0 {
            "no treated cells".into()
        } else {
            "every treated cell has a zero or unrecorded outcome".into()
        }));
    }
    let delta_hat = per_cell.iter().map(|c| c.relative_effect).sum::<f64>() / per_cell.len() as f64;
    Ok(EffectEstimate { delta_hat, n_treated, n_excluded, per_cell, interval: None, bootstrap_draws: Vec::new() })
}
