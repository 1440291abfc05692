//! Running the comparison estimators side by side on one panel.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tensorcf::SolverConfig;
use tensorcf_causal::{
    bootstrap_interval, estimate_delta, impute_with, select_lambda, CompletionMethod, Diagnostics, PanelDataset,
};

use crate::delta::delta_method_interval;
use crate::design::{fit_nb, impute_nb, impute_nb_all, NbModelSpec, NbVariant};
use crate::nb::NbOptions;
use crate::BaselineError;

/// Every estimator the toolkit can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    LL1,
    LL2,
    LL3,
    LL3c,
    MC1,
    MC2,
    TC,
}

impl Method {
    pub const ALL: [Method; 7] =
        [Method::LL1, Method::LL2, Method::LL3, Method::LL3c, Method::MC1, Method::MC2, Method::TC];

    pub fn label(self) -> &'static str {
        match self {
            Method::LL1 => "LL1",
            Method::LL2 => "LL2",
            Method::LL3 => "LL3",
            Method::LL3c => "LL3c",
            Method::MC1 => "MC1",
            Method::MC2 => "MC2",
            Method::TC => "TC",
        }
    }

    pub fn nb_variant(self) -> Option<NbVariant> {
        match self {
            Method::LL1 => Some(NbVariant::LL1),
            Method::LL2 => Some(NbVariant::LL2),
            Method::LL3 => Some(NbVariant::LL3),
            Method::LL3c => Some(NbVariant::LL3c),
            _ => None,
        }
    }

    pub fn completion(self) -> Option<CompletionMethod> {
        match self {
            Method::MC1 => Some(CompletionMethod::Matrix1),
            Method::MC2 => Some(CompletionMethod::Matrix2),
            Method::TC => Some(CompletionMethod::Tensor),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = BaselineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL.into_iter().find(|m| m.label().eq_ignore_ascii_case(s.trim())).ok_or_else(|| {
            let known: Vec<&str> = Method::ALL.iter().map(|m| m.label()).collect();
            BaselineError::Usage(format!("unknown method '{s}' (expected one of {})", known.join(", ")))
        })
    }
}

/// How the completion methods pick λ.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaChoice {
    Fixed(f64),
    /// K-fold cross-validation over observed primary cells; `None` grid
    /// means the default path below the operator norm.
    CrossValidate {
        grid: Option<Vec<f64>>,
        folds: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareConfig {
    /// Base solver settings; `lambda` is replaced according to `lambda_choice`.
    pub solver: SolverConfig<f64>,
    pub lambda_choice: LambdaChoice,
    pub nb: NbOptions,
    /// One dispersion for all outcomes of the stacked log-linear models.
    pub shared_dispersion: bool,
    /// Folds for the out-of-sample error; `None` skips it.
    pub oos_folds: Option<usize>,
    /// Bootstrap replications for the completion methods; 0 skips intervals.
    pub bootstrap_reps: usize,
    /// Compute delta-method intervals for the log-linear models.
    pub delta_intervals: bool,
    pub seed: u64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            lambda_choice: LambdaChoice::CrossValidate { grid: None, folds: 5 },
            nb: NbOptions::default(),
            shared_dispersion: true,
            oos_folds: Some(5),
            bootstrap_reps: 100,
            delta_intervals: true,
            seed: 0,
        }
    }
}

/// One row of the comparison table.
#[derive(Debug, Clone)]
pub struct MethodReport {
    pub method: Method,
    /// λ used by a completion method.
    pub lambda: Option<f64>,
    /// Transform-scale error at observed untreated primary cells.
    pub in_sample_mse: f64,
    pub out_of_sample_mse: Option<f64>,
    pub delta_hat: f64,
    pub interval: Option<(f64, f64)>,
    pub interval_reliable: bool,
    pub converged: bool,
    /// `Ŷ⁰` on the count scale for every cell.
    pub y0_hat: DMatrix<f64>,
    pub n_excluded: usize,
}

/// Matrix-completion baseline: the primary layer alone (MC1) or with the
/// transformed controls as covariates (MC2).
pub fn matrix_completion_baseline(
    d: &PanelDataset,
    variant: Method,
    cfg: &SolverConfig<f64>,
) -> Result<(DMatrix<f64>, Diagnostics), BaselineError> {
    let method = match variant {
        Method::MC1 => CompletionMethod::Matrix1,
        Method::MC2 => CompletionMethod::Matrix2,
        other => {
            return Err(BaselineError::Usage(format!("{other} is not a matrix-completion baseline")));
        }
    };
    let imp = impute_with(d, method, cfg)?;
    Ok((imp.y0_hat, imp.diagnostics))
}

/// Shuffled round-robin folds over the given cells.
fn fold_cells(cells: &[(usize, usize)], folds: usize, seed: u64) -> Vec<Vec<(usize, usize)>> {
    let mut order = cells.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (k, c) in order.into_iter().enumerate() {
        out[k % folds].push(c);
    }
    out
}

/// Cross-validated transform-scale error of a log-linear model: each fold
/// of untreated primary cells is withheld, refit, and predicted.
pub fn nb_out_of_sample_mse(
    d: &PanelDataset,
    spec: &NbModelSpec,
    folds: usize,
    seed: u64,
) -> Result<f64, BaselineError> {
    let cells: Vec<(usize, usize)> = (0..d.n_periods())
        .flat_map(|t| (0..d.n_units()).map(move |i| (i, t)))
        .filter(|&(i, t)| d.is_untreated_observed(i, t))
        .collect();
    if folds < 2 || cells.len() < folds {
        return Err(BaselineError::Input(format!("{folds} folds for {} observed cells", cells.len())));
    }
    let errors: Vec<f64> = fold_cells(&cells, folds, seed)
        .par_iter()
        .map(|held| {
            let mut train = d.clone();
            let mut missing =
                d.y_missing.clone().unwrap_or_else(|| DMatrix::from_element(d.n_units(), d.n_periods(), false));
            for &(i, t) in held {
                missing[(i, t)] = true;
            }
            train.y_missing = Some(missing);
            let fit = fit_nb(&train, spec)?;
            let pred = impute_nb(&fit, d, held)?;
            Ok(held
                .iter()
                .zip(pred)
                .map(|(&(i, t), m)| (d.transform.forward(m) - d.transform.forward(d.y_obs[(i, t)])).powi(2))
                .sum::<f64>())
        })
        .collect::<Result<_, BaselineError>>()?;
    Ok(errors.iter().sum::<f64>() / cells.len() as f64)
}

fn run_log_linear(
    d: &PanelDataset,
    variant: NbVariant,
    method: Method,
    cfg: &CompareConfig,
) -> Result<MethodReport, BaselineError> {
    let spec = NbModelSpec { options: cfg.nb, shared_dispersion: cfg.shared_dispersion, ..NbModelSpec::new(variant) };
    let fit = fit_nb(d, &spec)?;
    let y0_hat = impute_nb_all(&fit, d)?;
    let primary_rows: Vec<_> = fit.rows.iter().filter(|r| r.outcome == 0).collect();
    let in_sample_mse = if primary_rows.is_empty() {
        f64::NAN
    } else {
        primary_rows
            .iter()
            .map(|r| {
                let (i, t) = (r.unit, r.period);
                (d.transform.forward(y0_hat[(i, t)]) - d.transform.forward(d.y_obs[(i, t)])).powi(2)
            })
            .sum::<f64>()
            / primary_rows.len() as f64
    };
    let out_of_sample_mse = match cfg.oos_folds {
        Some(k) => match nb_out_of_sample_mse(d, &spec, k, cfg.seed) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("{method}: out-of-sample error unavailable: {e}");
                None
            }
        },
        None => None,
    };
    let effect = estimate_delta(&d.y1_for_effect(), &y0_hat, &d.w)?;
    let (interval, reliable) = if cfg.delta_intervals {
        let iv = delta_method_interval(&fit, d)?;
        (Some((iv.lo, iv.hi)), iv.reliable)
    } else {
        (None, false)
    };
    Ok(MethodReport {
        method,
        lambda: None,
        in_sample_mse,
        out_of_sample_mse,
        delta_hat: effect.delta_hat,
        interval,
        interval_reliable: reliable,
        converged: fit.converged,
        y0_hat,
        n_excluded: effect.n_excluded,
    })
}

fn run_completion(
    d: &PanelDataset,
    completion: CompletionMethod,
    method: Method,
    cfg: &CompareConfig,
) -> Result<MethodReport, BaselineError> {
    let (lambda, cv_error) = match &cfg.lambda_choice {
        LambdaChoice::Fixed(l) => (*l, None),
        LambdaChoice::CrossValidate { grid, folds } => {
            let res = select_lambda(d, completion, grid.as_deref(), Some(*folds), cfg.seed, &cfg.solver)?;
            let err = res.table.iter().find(|(l, _)| *l == res.lambda_star).map(|&(_, e)| e);
            (res.lambda_star, err)
        }
    };
    let solver = SolverConfig { lambda, ..cfg.solver.clone() };
    let imp = impute_with(d, completion, &solver)?;
    let out_of_sample_mse = match (cfg.oos_folds, cv_error, &cfg.lambda_choice) {
        (None, _, _) => None,
        (Some(k), Some(e), LambdaChoice::CrossValidate { folds, .. }) if *folds == k => Some(e),
        (Some(k), _, _) => Some(tensorcf_causal::out_of_sample_mse(d, completion, &solver, Some(k), cfg.seed)?),
    };
    let effect = estimate_delta(&d.y1_for_effect(), &imp.y0_hat, &d.w)?;
    let interval = if cfg.bootstrap_reps >= 2 {
        let b = bootstrap_interval(d, completion, &solver, cfg.bootstrap_reps, cfg.seed)?;
        Some((b.lo, b.hi))
    } else {
        None
    };
    Ok(MethodReport {
        method,
        lambda: Some(lambda),
        in_sample_mse: imp.diagnostics.in_sample_mse,
        out_of_sample_mse,
        delta_hat: effect.delta_hat,
        interval_reliable: interval.is_some(),
        interval,
        converged: imp.fit.converged,
        y0_hat: imp.y0_hat,
        n_excluded: effect.n_excluded,
    })
}

/// Fit one method and summarize it.
pub fn run_method(d: &PanelDataset, method: Method, cfg: &CompareConfig) -> Result<MethodReport, BaselineError> {
    if let Some(v) = method.nb_variant() {
        run_log_linear(d, v, method, cfg)
    } else if let Some(c) = method.completion() {
        run_completion(d, c, method, cfg)
    } else {
        unreachable!("every method is either log-linear or completion")
    }
}

/// Run `methods` concurrently. A failing method yields its error in place;
/// the others still run.
pub fn compare(d: &PanelDataset, methods: &[Method], cfg: &CompareConfig) -> Vec<Result<MethodReport, BaselineError>> {
    methods.par_iter().map(|&m| run_method(d, m, cfg)).collect()
}
