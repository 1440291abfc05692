//! Panel data model and outcome-tensor assembly.

use nalgebra::DMatrix;
use tensorcf::Tensor3;

use crate::CausalError;

/// Scale on which outcomes are modelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Transform {
    /// `log(x + 1)`; back-transform `expm1`.
    #[default]
    Log1p,
    Identity,
}

impl Transform {
    pub fn forward(self, x: f64) -> f64 {
        match self {
            Transform::Log1p => x.ln_1p(),
            Transform::Identity => x,
        }
    }

    /// Inverse transform, clamped at zero since outcomes are counts.
    pub fn inverse(self, v: f64) -> f64 {
        let x = match self {
            Transform::Log1p => v.exp_m1(),
            Transform::Identity => v,
        };
        x.max(0.0)
    }

    pub fn name(self) -> &'static str {
        match self {
            Transform::Log1p => "log1p",
            Transform::Identity => "none",
        }
    }
}

impl std::str::FromStr for Transform {
    type Err = CausalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "log1p" => Ok(Transform::Log1p),
            "none" | "identity" => Ok(Transform::Identity),
            other => Err(CausalError::Input(format!("unknown transform '{other}' (expected log1p or none)"))),
        }
    }
}

/// An auxiliary outcome used only to help impute the primary one.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutcome {
    pub name: String,
    /// `N x T` values. Entries flagged in `missing` are ignored.
    pub values: DMatrix<f64>,
    pub missing: Option<DMatrix<bool>>,
}

impl ControlOutcome {
    pub fn new(name: impl Into<String>, values: DMatrix<f64>) -> Self {
        Self { name: name.into(), values, missing: None }
    }

    pub fn is_missing(&self, i: usize, t: usize) -> bool {
        self.missing.as_ref().is_some_and(|m| m[(i, t)])
    }
}

/// A named `N x T` covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedMatrix {
    pub name: String,
    pub values: DMatrix<f64>,
}

/// Covariates for the primary outcome.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PanelCovariates {
    /// `N x d_N` unit-level covariates.
    pub unit: Option<DMatrix<f64>>,
    /// `d_T x T` period-level covariates.
    pub time: Option<DMatrix<f64>>,
    /// Covariates varying over both units and periods.
    pub unit_time: Vec<NamedMatrix>,
}

impl PanelCovariates {
    pub fn is_empty(&self) -> bool {
        self.unit.is_none() && self.time.is_none() && self.unit_time.is_empty()
    }
}

/// Observed panel: the primary outcome with its treatment mask, control
/// outcomes, covariates and per-unit offsets.
///
/// `y_obs` holds `Y¹` at treated cells and `Y⁰` elsewhere. Cells flagged in
/// `y_missing` have no record; their values are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    pub unit_ids: Vec<String>,
    pub periods: Vec<i64>,
    pub primary_name: String,
    pub y_obs: DMatrix<f64>,
    pub y_missing: Option<DMatrix<bool>>,
    pub w: DMatrix<bool>,
    pub controls: Vec<ControlOutcome>,
    pub covariates: PanelCovariates,
    /// Positive per-unit exposures `n_i`; `log n_i` enters as an offset.
    pub offsets: Option<Vec<f64>>,
    pub transform: Transform,
}

impl PanelDataset {
    /// Panel with default labels (`u1..`, periods `1..`), log1p transform and no extras.
    pub fn new(y_obs: DMatrix<f64>, w: DMatrix<bool>) -> Result<Self, CausalError> {
        let (n, t) = y_obs.shape();
        let d = Self {
            unit_ids: (1..=n).map(|i| format!("u{i}")).collect(),
            periods: (1..=t as i64).collect(),
            primary_name: "y".into(),
            y_obs,
            y_missing: None,
            w,
            controls: Vec::new(),
            covariates: PanelCovariates::default(),
            offsets: None,
            transform: Transform::Log1p,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn with_control(mut self, control: ControlOutcome) -> Self {
        self.controls.push(control);
        self
    }

    pub fn with_transform(mut self, transform: Transform) -> Self {
        self.transform = transform;
        self
    }

    pub fn n_units(&self) -> usize {
        self.y_obs.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.y_obs.ncols()
    }

    /// Number of outcomes including the primary one.
    pub fn n_outcomes(&self) -> usize {
        1 + self.controls.len()
    }

    pub fn n_treated(&self) -> usize {
        self.w.iter().filter(|&&w| w).count()
    }

    pub fn is_recorded(&self, i: usize, t: usize) -> bool {
        !self.y_missing.as_ref().is_some_and(|m| m[(i, t)])
    }

    /// Cells where `Y⁰` is observed: untreated and recorded.
    pub fn is_untreated_observed(&self, i: usize, t: usize) -> bool {
        !self.w[(i, t)] && self.is_recorded(i, t)
    }

    /// Treated cells as `(unit, period)` pairs, column-major.
    pub fn treated_cells(&self) -> Vec<(usize, usize)> {
        let mut cells = Vec::new();
        for t in 0..self.n_periods() {
            for i in 0..self.n_units() {
                if self.w[(i, t)] {
                    cells.push((i, t));
                }
            }
        }
        cells
    }

    /// `Y¹` with unrecorded cells set to NaN, for [`crate::estimate_delta`].
    pub fn y1_for_effect(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_units(), self.n_periods(), |i, t| {
            if self.is_recorded(i, t) {
                self.y_obs[(i, t)]
            } else {
                f64::NAN
            }
        })
    }

    /// Check shapes, finiteness and the count/offset constraints.
    pub fn validate(&self) -> Result<(), CausalError> {
        let (n, t) = self.y_obs.shape();
        if n == 0 || t == 0 {
            return Err(CausalError::Input("panel has no units or no periods".into()));
        }
        let shape_err = |what: &str, got: (usize, usize)| {
            CausalError::Input(format!("{what} is {}x{}, expected {n}x{t}", got.0, got.1))
        };
        if self.w.shape() != (n, t) {
            return Err(shape_err("treatment mask", self.w.shape()));
        }
        if let Some(m) = &self.y_missing {
            if m.shape() != (n, t) {
                return Err(shape_err("missing mask", m.shape()));
            }
        }
        if self.unit_ids.len() != n || self.periods.len() != t {
            return Err(CausalError::Input(format!(
                "{} unit labels and {} period labels for a {n}x{t} panel",
                self.unit_ids.len(),
                self.periods.len()
            )));
        }
        for c in &self.controls {
            if c.values.shape() != (n, t) {
                return Err(shape_err(&format!("control '{}'", c.name), c.values.shape()));
            }
            if let Some(m) = &c.missing {
                if m.shape() != (n, t) {
                    return Err(shape_err(&format!("missing mask of control '{}'", c.name), m.shape()));
                }
            }
        }
        if let Some(x) = &self.covariates.unit {
            if x.nrows() != n {
                return Err(CausalError::Input(format!("unit covariates have {} rows, expected {n}", x.nrows())));
            }
        }
        if let Some(x) = &self.covariates.time {
            if x.ncols() != t {
                return Err(CausalError::Input(format!("time covariates have {} columns, expected {t}", x.ncols())));
            }
        }
        for c in &self.covariates.unit_time {
            if c.values.shape() != (n, t) {
                return Err(shape_err(&format!("covariate '{}'", c.name), c.values.shape()));
            }
            if c.values.iter().any(|v| !v.is_finite()) {
                return Err(CausalError::Input(format!("covariate '{}' has non-finite values", c.name)));
            }
        }
        if let Some(off) = &self.offsets {
            if off.len() != n {
                return Err(CausalError::Input(format!("{} offsets for {n} units", off.len())));
            }
            if let Some(bad) = off.iter().position(|&o| !(o > 0.0 && o.is_finite())) {
                return Err(CausalError::Input(format!(
                    "offset for unit '{}' must be positive, got {}",
                    self.unit_ids[bad], off[bad]
                )));
            }
            if self.transform != Transform::Log1p {
                return Err(CausalError::Input("offsets require the log1p transform".into()));
            }
        }
        Ok(())
    }

    fn transformed(&self, value: f64, what: &str, i: usize, t: usize) -> Result<f64, CausalError> {
        if !value.is_finite() {
            return Err(CausalError::Input(format!(
                "non-finite {what} at unit '{}', period {}",
                self.unit_ids[i], self.periods[t]
            )));
        }
        if self.transform == Transform::Log1p && value < 0.0 {
            return Err(CausalError::Input(format!(
                "negative count {value} for {what} at unit '{}', period {}",
                self.unit_ids[i], self.periods[t]
            )));
        }
        Ok(self.transform.forward(value))
    }
}

/// Cell `(unit, period, outcome)` of the outcome tensor, zero-based.
pub type TensorCell = (usize, usize, usize);

/// Stack the transformed primary outcome and the controls into an
/// `N x T x K` tensor. Layer 0 is the primary outcome with treated and
/// unrecorded cells missing; missing cells hold zero.
pub fn assemble_tensor(d: &PanelDataset) -> Result<(Tensor3<f64>, Vec<TensorCell>), CausalError> {
    d.validate()?;
    let (n, t, k) = (d.n_units(), d.n_periods(), d.n_outcomes());
    let mut values = vec![0.0; n * t * k];
    let mut missing = Vec::new();
    for layer in 0..k {
        for p in 0..t {
            for i in 0..n {
                let idx = i + n * (p + t * layer);
                let observed =
                    if layer == 0 { d.is_untreated_observed(i, p) } else { !d.controls[layer - 1].is_missing(i, p) };
                if !observed {
                    missing.push((i, p, layer));
                    continue;
                }
                values[idx] = if layer == 0 {
                    d.transformed(d.y_obs[(i, p)], &d.primary_name, i, p)?
                } else {
                    let c = &d.controls[layer - 1];
                    d.transformed(c.values[(i, p)], &c.name, i, p)?
                };
            }
        }
    }
    let tensor = Tensor3::from_vec([n, t, k], values)?.with_labels(["unit", "period", "outcome"]);
    Ok((tensor, missing))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel() -> PanelDataset {
        let y = DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 5.0, 6.0]);
        let w = DMatrix::from_row_slice(2, 2, &[false, true, false, false]);
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 9.0]);
        let mut control = ControlOutcome::new("z", z);
        control.missing = Some(DMatrix::from_row_slice(2, 2, &[false, false, true, false]));
        PanelDataset::new(y, w).unwrap().with_control(control)
    }

    #[test]
    fn hand_enumerated_missing_set() {
        let (tensor, missing) = assemble_tensor(&panel()).unwrap();
        assert_eq!(tensor.dims(), [2, 2, 2]);
        // Treated (unit 1, period 2) in layer 1; control gap at (unit 2, period 1).
        assert_eq!(missing, vec![(0, 1, 0), (1, 0, 1)]);
        assert_eq!(tensor.get(0, 0, 0), 4f64.ln());
        assert_eq!(tensor.get(0, 1, 0), 0.0);
        assert_eq!(tensor.get(1, 1, 1), 10f64.ln());
    }

    #[test]
    fn treatment_extremes() {
        let y = DMatrix::from_element(3, 2, 2.0);
        let (_, missing) =
            assemble_tensor(&PanelDataset::new(y.clone(), DMatrix::from_element(3, 2, false)).unwrap()).unwrap();
        assert!(missing.is_empty());
        let (_, missing) = assemble_tensor(&PanelDataset::new(y, DMatrix::from_element(3, 2, true)).unwrap()).unwrap();
        assert_eq!(missing.len(), 6);
    }

    #[test]
    fn negative_counts_rejected_under_log1p() {
        let y = DMatrix::from_row_slice(1, 2, &[1.0, -2.0]);
        let d = PanelDataset::new(y, DMatrix::from_element(1, 2, false)).unwrap();
        assert!(matches!(assemble_tensor(&d), Err(CausalError::Input(_))));
        assert!(assemble_tensor(&d.with_transform(Transform::Identity)).is_ok());
    }

    #[test]
    fn validation_errors() {
        let y = DMatrix::from_element(2, 2, 1.0);
        assert!(PanelDataset::new(y.clone(), DMatrix::from_element(2, 3, false)).is_err());
        let mut d = PanelDataset::new(y, DMatrix::from_element(2, 2, false)).unwrap();
        d.offsets = Some(vec![1.0, 0.0]);
        assert!(d.validate().is_err());
        d.offsets = Some(vec![1.0, 2.0]);
        assert!(d.validate().is_ok());
        d.transform = Transform::Identity;
        assert!(d.validate().is_err());
    }

    #[test]
    fn transform_round_trip_and_clamp() {
        assert!((Transform::Log1p.inverse(Transform::Log1p.forward(41.0)) - 41.0).abs() < 1e-12);
        assert_eq!(Transform::Log1p.inverse(-3.0), 0.0);
        assert_eq!(Transform::Identity.inverse(-0.5), 0.0);
        assert_eq!("none".parse::<Transform>().unwrap(), Transform::Identity);
        assert!("sqrt".parse::<Transform>().is_err());
    }
}
