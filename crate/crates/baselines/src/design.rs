//! Log-linear count models on a panel: design expansion, fitting and imputation.

use nalgebra::{DMatrix, DVector};
use tensorcf_causal::PanelDataset;

use crate::nb::{fit_glm, Dispersion, GlmData, NbOptions};
use crate::BaselineError;

/// Which outcomes enter the log-linear model and how.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NbVariant {
    /// Primary outcome only: `θ_i + η_t + γ·X_it + log n_i`.
    LL1,
    /// LL1 plus `ζ_k log Z^k_it` for every control outcome.
    LL2,
    /// Controls as extra outcomes sharing `θ_i` and `γ`, each with its own
    /// period effects `τ^k_t` in place of `η_t`.
    LL3,
    /// Controls as extra outcomes sharing `θ_i`, `η_t` and `γ`, shifted by a
    /// constant `τ^k`. This is the simulation data-generating form.
    LL3c,
}

impl NbVariant {
    pub fn label(self) -> &'static str {
        match self {
            NbVariant::LL1 => "LL1",
            NbVariant::LL2 => "LL2",
            NbVariant::LL3 => "LL3",
            NbVariant::LL3c => "LL3c",
        }
    }

    fn stacks_controls(self) -> bool {
        matches!(self, NbVariant::LL3 | NbVariant::LL3c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NbModelSpec {
    pub variant: NbVariant,
    /// One `φ` for all stacked outcomes (LL3/LL3c); otherwise one per outcome.
    pub shared_dispersion: bool,
    pub options: NbOptions,
}

impl NbModelSpec {
    pub fn new(variant: NbVariant) -> Self {
        Self { variant, shared_dispersion: true, options: NbOptions::default() }
    }

    pub fn with_dispersion(mut self, dispersion: Dispersion) -> Self {
        self.options.dispersion = dispersion;
        self
    }
}

/// Row of the stacked likelihood: a cell of the primary outcome (`outcome`
/// 0) or of control `outcome − 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DesignRow {
    pub unit: usize,
    pub period: usize,
    pub outcome: usize,
}

/// Column layout of a panel model.
#[derive(Debug, Clone, PartialEq)]
pub struct NbDesign {
    pub variant: NbVariant,
    pub names: Vec<String>,
    n_units: usize,
    n_periods: usize,
    n_controls: usize,
    n_unit_time: usize,
    first_unit: usize,
    first_period: usize,
    first_covariate: usize,
    first_extra: usize,
}

impl NbDesign {
    fn new(variant: NbVariant, d: &PanelDataset) -> Self {
        let (n, t, k) = (d.n_units(), d.n_periods(), d.controls.len());
        let mut names = vec!["intercept".to_string()];
        let first_unit = names.len();
        names.extend(d.unit_ids[1..].iter().map(|u| format!("unit[{u}]")));
        let first_period = names.len();
        names.extend(d.periods[1..].iter().map(|p| format!("period[{p}]")));
        let first_covariate = names.len();
        names.extend(d.covariates.unit_time.iter().map(|c| c.name.clone()));
        let first_extra = names.len();
        for c in &d.controls {
            match variant {
                NbVariant::LL1 => {}
                NbVariant::LL2 => names.push(format!("log {}", c.name)),
                NbVariant::LL3 => names.extend(d.periods.iter().map(|p| format!("tau[{}][{p}]", c.name))),
                NbVariant::LL3c => names.push(format!("tau[{}]", c.name)),
            }
        }
        Self {
            variant,
            names,
            n_units: n,
            n_periods: t,
            n_controls: if variant == NbVariant::LL1 { 0 } else { k },
            n_unit_time: d.covariates.unit_time.len(),
            first_unit,
            first_period,
            first_covariate,
            first_extra,
        }
    }

    pub fn n_columns(&self) -> usize {
        self.names.len()
    }

    /// Feature vector of one row of the stacked likelihood.
    pub fn row(&self, d: &PanelDataset, r: DesignRow) -> Result<DVector<f64>, BaselineError> {
        let DesignRow { unit: i, period: t, outcome } = r;
        let mut x = DVector::zeros(self.n_columns());
        x[0] = 1.0;
        if i > 0 {
            x[self.first_unit + i - 1] = 1.0;
        }
        let period_effect = outcome == 0 || self.variant == NbVariant::LL3c;
        if period_effect && t > 0 {
            x[self.first_period + t - 1] = 1.0;
        }
        for (c, cov) in d.covariates.unit_time.iter().enumerate() {
            x[self.first_covariate + c] = cov.values[(i, t)];
        }
        match self.variant {
            NbVariant::LL1 => {}
            NbVariant::LL2 => {
                for (k, c) in d.controls.iter().enumerate() {
                    if c.is_missing(i, t) {
                        return Err(BaselineError::Input(format!(
                            "control '{}' is missing at unit '{}', period {}",
                            c.name, d.unit_ids[i], d.periods[t]
                        )));
                    }
                    x[self.first_extra + k] = log_control(c.values[(i, t)]);
                }
            }
            NbVariant::LL3 if outcome > 0 => x[self.first_extra + (outcome - 1) * self.n_periods + t] = 1.0,
            NbVariant::LL3c if outcome > 0 => x[self.first_extra + outcome - 1] = 1.0,
            _ => {}
        }
        Ok(x)
    }

    fn check(&self, d: &PanelDataset) -> Result<(), BaselineError> {
        if d.n_units() != self.n_units
            || d.n_periods() != self.n_periods
            || d.covariates.unit_time.len() != self.n_unit_time
            || (self.variant != NbVariant::LL1 && d.controls.len() != self.n_controls)
        {
            return Err(BaselineError::Input("panel does not match the fitted design".into()));
        }
        Ok(())
    }
}

/// `log Z`, with zero counts treated as one.
fn log_control(z: f64) -> f64 {
    if z <= 0.0 {
        0.0
    } else {
        z.ln()
    }
}

fn log_offset(d: &PanelDataset, i: usize) -> f64 {
    d.offsets.as_ref().map_or(0.0, |o| o[i].ln())
}

/// A fitted log-linear model.
#[derive(Debug, Clone)]
pub struct NbFit {
    pub design: NbDesign,
    pub coefficients: DVector<f64>,
    /// Dispersion of the primary outcome.
    pub phi_hat: f64,
    /// Dispersion per outcome in stacking order.
    pub phi_by_outcome: Vec<f64>,
    pub covariance: DMatrix<f64>,
    /// False when the information matrix had to be pseudo-inverted.
    pub covariance_reliable: bool,
    pub log_lik: f64,
    pub log_lik_trace: Vec<f64>,
    pub converged: bool,
    pub poisson_limit: bool,
    /// Rows used in the likelihood.
    pub rows: Vec<DesignRow>,
}

impl NbFit {
    /// Coefficient by column name.
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.design.names.iter().position(|n| n == name).map(|k| self.coefficients[k])
    }

    /// `exp(μ̂)` for one primary cell, offsets included.
    pub fn mean_at(&self, d: &PanelDataset, i: usize, t: usize) -> Result<f64, BaselineError> {
        let x = self.design.row(d, DesignRow { unit: i, period: t, outcome: 0 })?;
        Ok((x.dot(&self.coefficients) + log_offset(d, i)).exp())
    }
}

/// Rows entering the likelihood: untreated recorded primary cells plus
/// recorded control cells for the stacked variants.
fn likelihood_rows(d: &PanelDataset, variant: NbVariant) -> Vec<DesignRow> {
    let mut rows = Vec::new();
    let (n, t) = (d.n_units(), d.n_periods());
    let mut skipped = 0;
    for p in 0..t {
        for i in 0..n {
            if !d.is_untreated_observed(i, p) {
                continue;
            }
            if variant == NbVariant::LL2 && d.controls.iter().any(|c| c.is_missing(i, p)) {
                skipped += 1;
                continue;
            }
            rows.push(DesignRow { unit: i, period: p, outcome: 0 });
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} primary cells dropped from the fit because a control covariate is missing");
    }
    if variant.stacks_controls() {
        for (k, c) in d.controls.iter().enumerate() {
            for p in 0..t {
                for i in 0..n {
                    if !c.is_missing(i, p) {
                        rows.push(DesignRow { unit: i, period: p, outcome: k + 1 });
                    }
                }
            }
        }
    }
    rows
}

/// Fit a log-linear negative-binomial model to the panel by maximum likelihood.
pub fn fit_nb(d: &PanelDataset, spec: &NbModelSpec) -> Result<NbFit, BaselineError> {
    d.validate()?;
    let design = NbDesign::new(spec.variant, d);
    if spec.variant == NbVariant::LL2 {
        let zeros = d.controls.iter().flat_map(|c| c.values.iter()).filter(|&&z| z <= 0.0).count();
        if zeros > 0 {
            log::warn!("{zeros} zero control counts enter the log-control covariate as log 1");
        }
    }
    let rows = likelihood_rows(d, spec.variant);
    let mut x = DMatrix::zeros(rows.len(), design.n_columns());
    let mut y = Vec::with_capacity(rows.len());
    let mut offset = Vec::with_capacity(rows.len());
    let mut groups = Vec::with_capacity(rows.len());
    for (r, &row) in rows.iter().enumerate() {
        x.set_row(r, &design.row(d, row)?.transpose());
        let value = if row.outcome == 0 {
            d.y_obs[(row.unit, row.period)]
        } else {
            d.controls[row.outcome - 1].values[(row.unit, row.period)]
        };
        y.push(value);
        offset.push(log_offset(d, row.unit));
        groups.push(if spec.shared_dispersion { 0 } else { row.outcome });
    }
    let data = GlmData { groups: (!spec.shared_dispersion).then_some(&groups[..]), ..GlmData::new(&x, &y, &offset) };
    let glm = fit_glm(data, &spec.options).map_err(|e| match e {
        BaselineError::Input(msg) => BaselineError::Input(format!("{}: {msg}", spec.variant.label())),
        other => other,
    })?;
    let n_outcomes = if spec.variant.stacks_controls() { d.n_outcomes() } else { 1 };
    let phi_by_outcome: Vec<f64> = (0..n_outcomes)
        .map(|k| if spec.shared_dispersion { glm.phi[0] } else { glm.phi.get(k).copied().unwrap_or(glm.phi[0]) })
        .collect();
    Ok(NbFit {
        design,
        coefficients: glm.coefficients,
        phi_hat: phi_by_outcome[0],
        phi_by_outcome,
        covariance: glm.covariance,
        covariance_reliable: !glm.covariance_singular,
        log_lik: glm.log_lik,
        log_lik_trace: glm.log_lik_trace,
        converged: glm.converged,
        poisson_limit: glm.poisson_limit,
        rows,
    })
}

/// Conditional-mean imputation `exp(μ̂_it)` at the given primary cells.
pub fn impute_nb(fit: &NbFit, d: &PanelDataset, cells: &[(usize, usize)]) -> Result<Vec<f64>, BaselineError> {
    fit.design.check(d)?;
    cells.iter().map(|&(i, t)| fit.mean_at(d, i, t)).collect()
}

/// Conditional-mean imputation for every primary cell.
pub fn impute_nb_all(fit: &NbFit, d: &PanelDataset) -> Result<DMatrix<f64>, BaselineError> {
    fit.design.check(d)?;
    let mut out = DMatrix::zeros(d.n_units(), d.n_periods());
    for t in 0..d.n_periods() {
        for i in 0..d.n_units() {
            out[(i, t)] = fit.mean_at(d, i, t)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tensorcf_causal::ControlOutcome;

    fn small_panel() -> PanelDataset {
        let y = DMatrix::from_row_slice(3, 3, &[4.0, 7.0, 9.0, 12.0, 15.0, 20.0, 2.0, 5.0, 3.0]);
        let w = DMatrix::from_fn(3, 3, |i, t| i == 2 && t == 2);
        let z = DMatrix::from_row_slice(3, 3, &[2.0, 3.0, 5.0, 6.0, 8.0, 9.0, 0.0, 2.0, 1.0]);
        PanelDataset::new(y, w).unwrap().with_control(ControlOutcome::new("z", z))
    }

    #[test]
    fn column_layout() {
        let d = small_panel();
        assert_eq!(NbDesign::new(NbVariant::LL1, &d).n_columns(), 5);
        assert_eq!(NbDesign::new(NbVariant::LL2, &d).names.last().unwrap(), "log z");
        let ll3 = NbDesign::new(NbVariant::LL3, &d);
        assert_eq!(ll3.n_columns(), 8);
        let row = ll3.row(&d, DesignRow { unit: 1, period: 2, outcome: 1 }).unwrap();
        // intercept, unit[u2], tau[z][3]; no period effect on control rows.
        let hot: Vec<usize> = (0..8).filter(|&c| row[c] != 0.0).collect();
        assert_eq!(hot, vec![0, 1, 7]);
        assert_eq!(NbDesign::new(NbVariant::LL3c, &d).n_columns(), 6);
    }

    #[test]
    fn treated_cells_excluded_from_the_likelihood() {
        let d = small_panel();
        assert_eq!(likelihood_rows(&d, NbVariant::LL1).len(), 8);
        assert_eq!(likelihood_rows(&d, NbVariant::LL3).len(), 17);
    }

    #[test]
    fn reference_period_imputes_offset_times_baseline() {
        // One unit, so the intercept is the reference-period log rate.
        let y = DMatrix::from_row_slice(1, 4, &[10.0, 14.0, 6.0, 10.0]);
        let mut d = PanelDataset::new(y, DMatrix::from_element(1, 4, false)).unwrap();
        d.offsets = Some(vec![5.0]);
        let fit = fit_nb(&d, &NbModelSpec::new(NbVariant::LL1).with_dispersion(Dispersion::Poisson)).unwrap();
        let beta0 = fit.coefficient("intercept").unwrap();
        let cells = impute_nb(&fit, &d, &[(0, 0)]).unwrap();
        assert!((cells[0] - 5.0 * beta0.exp()).abs() < 1e-9);
        assert!((cells[0] - 10.0).abs() < 1e-6);
    }

    #[test]
    fn ll2_imputation_tracks_the_control() {
        let d = small_panel();
        let fit = fit_nb(&d, &NbModelSpec::new(NbVariant::LL2)).unwrap();
        let before = impute_nb(&fit, &d, &[(2, 2)]).unwrap()[0];
        let mut changed = d.clone();
        changed.controls[0].values[(2, 2)] = 50.0;
        let after = impute_nb(&fit, &changed, &[(2, 2)]).unwrap()[0];
        assert!((before - after).abs() > 1e-6);
    }

    #[test]
    fn missing_control_at_imputation_cell_is_an_input_error() {
        let mut d = small_panel();
        let fit = fit_nb(&d, &NbModelSpec::new(NbVariant::LL2)).unwrap();
        d.controls[0].missing = Some(DMatrix::from_fn(3, 3, |i, t| i == 2 && t == 2));
        assert!(matches!(impute_nb(&fit, &d, &[(2, 2)]), Err(BaselineError::Input(_))));
    }

    #[test]
    fn fully_treated_unit_is_rank_deficient() {
        let mut d = small_panel();
        d.w = DMatrix::from_fn(3, 3, |i, _| i == 2);
        assert!(matches!(fit_nb(&d, &NbModelSpec::new(NbVariant::LL1)), Err(BaselineError::Input(_))));
        // The stacked model still identifies the unit through the control.
        assert!(fit_nb(&d, &NbModelSpec::new(NbVariant::LL3)).is_ok());
    }
}
