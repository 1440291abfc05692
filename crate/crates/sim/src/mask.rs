//! Treatment-assignment mechanisms for simulated panels.

use nalgebra::DMatrix;
use rand::seq::index::{sample, sample_weighted};
use rand::Rng;

use crate::SimError;

/// `k` cells chosen uniformly without replacement.
pub fn mcar_mask<R: Rng + ?Sized>(n: usize, t: usize, k: usize, rng: &mut R) -> DMatrix<bool> {
    let mut w = DMatrix::from_element(n, t, false);
    for idx in sample(rng, n * t, k.min(n * t)) {
        w[(idx % n, idx / n)] = true;
    }
    w
}

/// `k / t` cells per period chosen uniformly; the remainder goes one each
/// to the earliest periods.
pub fn within_season_mask<R: Rng + ?Sized>(n: usize, t: usize, k: usize, rng: &mut R) -> DMatrix<bool> {
    let mut w = DMatrix::from_element(n, t, false);
    let (base, extra) = (k / t, k % t);
    let mut overflow = 0;
    for p in 0..t {
        let want = base + usize::from(p < extra) + overflow;
        let take = want.min(n);
        overflow = want - take;
        for i in sample(rng, n, take) {
            w[(i, p)] = true;
        }
    }
    if overflow > 0 {
        // Later periods were full; place what is left anywhere still free.
        let free: Vec<(usize, usize)> =
            (0..t).flat_map(|p| (0..n).map(move |i| (i, p))).filter(|&(i, p)| !w[(i, p)]).collect();
        for idx in sample(rng, free.len(), overflow.min(free.len())) {
            w[free[idx]] = true;
        }
    }
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropensityMask {
    pub mask: DMatrix<bool>,
    /// Periods with zero spread, whose cells got equal weight.
    pub flagged_periods: Vec<usize>,
    /// Selection weight of every cell, before normalization.
    pub weights: DMatrix<f64>,
}

/// Standardize `y0` within each period: center by the period mean and
/// divide by `sqrt(SS) / (N − 1)`.
pub fn standardize_columns(y0: &DMatrix<f64>) -> (DMatrix<f64>, Vec<usize>) {
    let n = y0.nrows();
    let mut out = DMatrix::zeros(n, y0.ncols());
    let mut flagged = Vec::new();
    for p in 0..y0.ncols() {
        let col = y0.column(p);
        let mean = col.mean();
        let ss: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
        let scale = ss.sqrt() / (n.max(2) - 1) as f64;
        if scale > 0.0 {
            for i in 0..n {
                out[(i, p)] = (col[i] - mean) / scale;
            }
        } else {
            flagged.push(p);
        }
    }
    (out, flagged)
}

/// Choose `k` cells without replacement with probability proportional to
/// `1 / (exp(Y*) + 1)`, where `Y*` is `y0` standardized within period.
/// A period without spread gets `Y* = 0` for all its cells and is flagged.
pub fn propensity_mask<R: Rng + ?Sized>(y0: &DMatrix<f64>, k: usize, rng: &mut R) -> Result<PropensityMask, SimError> {
    let (n, t) = y0.shape();
    if k > n * t {
        return Err(SimError::Input(format!("{k} masked cells exceed the {} cells of the panel", n * t)));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(SimError::Input("outcomes must be finite".into()));
    }
    let (ystar, flagged) = standardize_columns(y0);
    for &p in &flagged {
        log::warn!("period {} has zero spread; using uniform selection weights", p + 1);
    }
    // Logistic tail written to avoid overflow; floored so every cell stays eligible.
    let weights = ystar.map(|v| {
        let w = if v > 0.0 { (-v).exp() / (1.0 + (-v).exp()) } else { 1.0 / (v.exp() + 1.0) };
        w.max(f64::MIN_POSITIVE)
    });
    let mut mask = DMatrix::from_element(n, t, false);
    let chosen = sample_weighted(rng, n * t, |idx| weights[(idx % n, idx / n)], k)
        .map_err(|e| SimError::Numerical(format!("weighted sampling failed: {e}")))?;
    for idx in chosen {
        mask[(idx % n, idx / n)] = true;
    }
    Ok(PropensityMask { mask, flagged_periods: flagged, weights })
}
