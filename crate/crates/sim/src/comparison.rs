//! Monte-Carlo comparison of imputation methods on simulated panels.

use rayon::prelude::*;
use tensorcf::SolverConfig;
use tensorcf_baselines::{run_method, CompareConfig, LambdaChoice, Method};

use crate::scenario::{generate, SimScenario};
use crate::SimError;

/// Methods compared when none are named: the univariate log-linear model,
/// the stacked log-linear model in its simulation form, univariate matrix
/// completion and tensor completion.
pub const DEFAULT_METHODS: [Method; 4] = [Method::LL1, Method::LL3c, Method::MC1, Method::TC];

/// Seed of replication `rep` in a run seeded with `seed`.
pub fn replication_seed(seed: u64, rep: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(rep as u64)
}

/// Per-method settings used in simulations: λ by 5-fold cross-validation
/// over the default grid, solved with continuation, no intervals.
pub fn simulation_config(seed: u64) -> CompareConfig {
    CompareConfig {
        solver: SolverConfig { continuation: true, ..SolverConfig::default() },
        lambda_choice: LambdaChoice::CrossValidate { grid: None, folds: 5 },
        oos_folds: None,
        bootstrap_reps: 0,
        delta_intervals: false,
        seed,
        ..CompareConfig::default()
    }
}

/// One method's outcome in one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct RepOutcome {
    /// Transform-scale squared error at masked cells, averaged.
    pub mse: f64,
    pub delta_hat: f64,
    /// `|Ŷ⁰ − Y⁰| / Y⁰` at every masked cell (NaN where `Y⁰ = 0`).
    pub mape: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    /// Means over successful replications.
    pub mean_mse: f64,
    pub mean_delta_hat: f64,
    /// One entry per replication; `None` where the method failed.
    pub reps: Vec<Option<RepOutcome>>,
    /// Failure messages, by replication.
    pub errors: Vec<(usize, String)>,
}

impl MethodSummary {
    pub fn n_failed(&self) -> usize {
        self.errors.len()
    }

    pub fn n_nonconverged(&self) -> usize {
        self.reps.iter().flatten().filter(|r| !r.converged).count()
    }

    pub fn delta_hats(&self) -> Vec<f64> {
        self.reps.iter().flatten().map(|r| r.delta_hat).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub scenario: SimScenario,
    pub n_reps: usize,
    pub seed: u64,
    pub truth_delta: f64,
    pub per_method: Vec<MethodSummary>,
}

impl SimResult {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.per_method.iter().find(|s| s.method == m)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Run every method on `reps` simulated panels with the simulation settings.
pub fn run_comparison(s: &SimScenario, methods: &[Method], reps: usize, seed: u64) -> Result<SimResult, SimError> {
    run_comparison_with(s, methods, reps, seed, &simulation_config(seed))
}

/// As [`run_comparison`] with explicit method settings. Replication `r`
/// uses scenario seed [`replication_seed`]`(seed, r)`; the cross-validation
/// seed is shared. Replications run concurrently; a method that fails in a
/// replication is recorded and the run continues.
pub fn run_comparison_with(
    s: &SimScenario,
    methods: &[Method],
    reps: usize,
    seed: u64,
    cfg: &CompareConfig,
) -> Result<SimResult, SimError> {
    s.validate()?;
    if reps == 0 {
        return Err(SimError::Input("at least one replication is required".into()));
    }
    if methods.is_empty() {
        return Err(SimError::Input("no methods to compare".into()));
    }
    let per_rep: Vec<Vec<Result<RepOutcome, String>>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let scenario = SimScenario { seed: replication_seed(seed, rep), ..s.clone() };
            let data = generate(&scenario)?;
            let d = &data.dataset;
            let cells = d.treated_cells();
            Ok(methods
                .par_iter()
                .map(|&m| {
                    let report = run_method(d, m, cfg).map_err(|e| e.to_string())?;
                    let mse = mean(cells.iter().map(|&(i, t)| {
                        (d.transform.forward(report.y0_hat[(i, t)]) - d.transform.forward(data.y0_truth[(i, t)]))
                            .powi(2)
                    }));
                    let mape = cells
                        .iter()
                        .map(|&(i, t)| {
                            let truth = data.y0_truth[(i, t)];
                            if truth == 0.0 {
                                f64::NAN
                            } else {
                                (report.y0_hat[(i, t)] - truth).abs() / truth
                            }
                        })
                        .collect();
                    Ok(RepOutcome { mse, delta_hat: report.delta_hat, mape, converged: report.converged })
                })
                .collect())
        })
        .collect::<Result<_, SimError>>()?;

    let per_method = methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let mut outcomes = Vec::with_capacity(reps);
            let mut errors = Vec::new();
            for (rep, row) in per_rep.iter().enumerate() {
                match &row[k] {
                    Ok(o) => outcomes.push(Some(o.clone())),
                    Err(e) => {
                        log::warn!("{method} failed in replication {rep}: {e}");
                        errors.push((rep, e.clone()));
                        outcomes.push(None);
                    }
                }
            }
            MethodSummary {
                method,
                mean_mse: mean(outcomes.iter().flatten().map(|o| o.mse)),
                mean_delta_hat: mean(outcomes.iter().flatten().map(|o| o.delta_hat)),
                reps: outcomes,
                errors,
            }
        })
        .collect();
    Ok(SimResult { scenario: s.clone(), n_reps: reps, seed, truth_delta: s.truth_delta(), per_method })
}
