//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tensorcf::SolverConfig;
use tensorcf_baselines::{BaselineError, CompareConfig, Dispersion, LambdaChoice, Method, NbOptions};
use tensorcf_causal::Transform;
use tensorcf_sim::{Mechanism, RateConfig, Scenario, SimScenario, DEFAULT_METHODS};

use crate::IoError;

/// Everything a command needs besides the data file itself.
///
/// Every field has a default, so an empty file is a valid configuration for
/// `simulate` and `rate`. The panel commands need at least `data` and
/// `primary_outcome`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Long-format panel CSV; relative paths resolve against the config file.
    pub data: Option<PathBuf>,
    pub primary_outcome: String,
    pub control_outcomes: Vec<String>,
    /// `log1p` or `none`.
    pub transform: String,
    pub covariates: CovariateSpec,
    /// Method labels, e.g. `["TC", "MC1", "LL1"]`.
    pub methods: Vec<String>,
    pub solver: SolverSection,
    /// Explicit λ grid for cross-validation; empty means the default path.
    pub lambda_grid: Vec<f64>,
    pub cv_folds: usize,
    /// Folds for the out-of-sample error column; 0 skips it.
    pub oos_folds: usize,
    pub bootstrap_reps: usize,
    pub delta_intervals: bool,
    /// Estimate one dispersion per outcome in the stacked log-linear models.
    pub per_outcome_dispersion: bool,
    pub seed: u64,
    pub output: PathBuf,
    pub simulate: SimulateSection,
    pub rate: RateSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovariateSpec {
    /// CSV columns holding covariates that vary by unit and period.
    pub unit_time: Vec<String>,
    /// CSV column holding a positive per-unit exposure; its log is the offset.
    pub offset: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    /// Fixed λ; when absent, λ is chosen by cross-validation.
    pub lambda: Option<f64>,
    pub max_iters: usize,
    pub tol: f64,
    pub svd_rank_cap: Option<usize>,
    pub continuation: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::<f64>::default();
        Self { lambda: None, max_iters: d.max_iters, tol: d.tol, svd_rank_cap: d.svd_rank_cap, continuation: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub scenarios: Vec<String>,
    pub reps: usize,
    pub n: usize,
    pub t: usize,
    pub n_missing: usize,
    /// `mcar`, `mcar_within_season` or `propensity`.
    pub mechanism: String,
    /// Methods compared in simulations; empty means LL1, LL3c, MC1 and TC.
    pub methods: Vec<String>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            scenarios: vec!["S1".into(), "S2".into(), "S3".into()],
            reps: 20,
            n: 50,
            t: 8,
            n_missing: 100,
            mechanism: "mcar".into(),
            methods: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateSection {
    pub r: usize,
    pub n: usize,
    pub t: usize,
    pub k_grid: Vec<usize>,
    pub noise_sd: f64,
    pub seeds: usize,
}

impl Default for RateSection {
    fn default() -> Self {
        Self { r: 2, n: 50, t: 8, k_grid: vec![1, 2, 4, 8], noise_sd: 1.0, seeds: 50 }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            primary_outcome: String::new(),
            control_outcomes: Vec::new(),
            transform: "log1p".into(),
            covariates: CovariateSpec::default(),
            methods: ["TC", "MC1", "MC2", "LL1", "LL2", "LL3"].map(String::from).to_vec(),
            solver: SolverSection::default(),
            lambda_grid: Vec::new(),
            cv_folds: 5,
            oos_folds: 5,
            bootstrap_reps: 100,
            delta_intervals: true,
            per_outcome_dispersion: false,
            seed: 0,
            output: PathBuf::from("out"),
            simulate: SimulateSection::default(),
            rate: RateSection::default(),
        }
    }
}

fn parse_methods(labels: &[String]) -> Result<Vec<Method>, IoError> {
    let mut out = Vec::with_capacity(labels.len());
    for l in labels {
        let m: Method = l.parse().map_err(|e| match e {
            BaselineError::Usage(msg) => IoError::Usage(msg),
            other => IoError::Baseline(other),
        })?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, IoError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| IoError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read and validate a config file. A relative `data` path is resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(data), Some(dir)) = (&cfg.data, path.parent()) {
            if data.is_relative() {
                cfg.data = Some(dir.join(data));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form, hex encoded. The output
    /// directory is left out so that reruns elsewhere hash the same.
    pub fn hash(&self) -> String {
        let canonical = RunConfig { output: PathBuf::new(), ..self.clone() };
        format!("{:x}", Sha256::digest(canonical.to_toml_string().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), IoError> {
        if self.control_outcomes.iter().any(|c| c == &self.primary_outcome) {
            return Err(IoError::Config(format!(
                "primary outcome '{}' is also listed as a control",
                self.primary_outcome
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.control_outcomes.iter().find(|c| !seen.insert(c.as_str())) {
            return Err(IoError::Config(format!("control outcome '{dup}' listed twice")));
        }
        self.transform()?;
        self.methods()?;
        self.sim_methods()?;
        if self.cv_folds < 2 {
            return Err(IoError::Config(format!("cv_folds must be at least 2, got {}", self.cv_folds)));
        }
        if self.oos_folds == 1 {
            return Err(IoError::Config("oos_folds must be 0 (skip) or at least 2".into()));
        }
        if self.bootstrap_reps == 1 {
            return Err(IoError::Config("bootstrap_reps must be 0 (skip) or at least 2".into()));
        }
        if let Some(l) = self.solver.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(IoError::Config(format!("solver.lambda must be nonnegative, got {l}")));
            }
        }
        if let Some(bad) = self.lambda_grid.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(IoError::Config(format!("lambda_grid entries must be nonnegative, got {bad}")));
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iters == 0 {
            return Err(IoError::Config("solver.tol must be positive and solver.max_iters nonzero".into()));
        }
        for s in &self.simulate.scenarios {
            s.parse::<Scenario>().map_err(|e| IoError::Config(e.to_string()))?;
        }
        self.simulate.mechanism.parse::<Mechanism>().map_err(|e| IoError::Config(e.to_string()))?;
        Ok(())
    }

    /// Check the fields the panel commands need.
    pub fn require_panel(&self) -> Result<&Path, IoError> {
        if self.primary_outcome.is_empty() {
            return Err(IoError::Config("primary_outcome is required".into()));
        }
        self.data.as_deref().ok_or_else(|| IoError::Config("no data file given (set `data` or pass --data)".into()))
    }

    pub fn transform(&self) -> Result<Transform, IoError> {
        self.transform.parse().map_err(|e: tensorcf_causal::CausalError| IoError::Config(e.to_string()))
    }

    pub fn methods(&self) -> Result<Vec<Method>, IoError> {
        parse_methods(&self.methods)
    }

    pub fn sim_methods(&self) -> Result<Vec<Method>, IoError> {
        if self.simulate.methods.is_empty() {
            Ok(DEFAULT_METHODS.to_vec())
        } else {
            parse_methods(&self.simulate.methods)
        }
    }

    pub fn solver_config(&self) -> SolverConfig<f64> {
        SolverConfig {
            lambda: self.solver.lambda.unwrap_or(0.0),
            max_iters: self.solver.max_iters,
            tol: self.solver.tol,
            svd_rank_cap: self.solver.svd_rank_cap,
            continuation: self.solver.continuation,
        }
    }

    pub fn lambda_choice(&self) -> LambdaChoice {
        match self.solver.lambda {
            Some(l) => LambdaChoice::Fixed(l),
            None => LambdaChoice::CrossValidate {
                grid: (!self.lambda_grid.is_empty()).then(|| self.lambda_grid.clone()),
                folds: self.cv_folds,
            },
        }
    }

    pub fn compare_config(&self) -> CompareConfig {
        CompareConfig {
            solver: self.solver_config(),
            lambda_choice: self.lambda_choice(),
            nb: NbOptions { dispersion: Dispersion::Estimate, ..NbOptions::default() },
            shared_dispersion: !self.per_outcome_dispersion,
            oos_folds: (self.oos_folds > 0).then_some(self.oos_folds),
            bootstrap_reps: self.bootstrap_reps,
            delta_intervals: self.delta_intervals,
            seed: self.seed,
        }
    }

    pub fn scenarios(&self) -> Result<Vec<SimScenario>, IoError> {
        let mechanism: Mechanism = self.simulate.mechanism.parse().map_err(|e| IoError::Config(format!("{e}")))?;
        self.simulate
            .scenarios
            .iter()
            .map(|s| {
                let which: Scenario = s.parse().map_err(|e| IoError::Config(format!("{e}")))?;
                Ok(SimScenario {
                    n: self.simulate.n,
                    t: self.simulate.t,
                    n_missing: self.simulate.n_missing,
                    mechanism,
                    ..SimScenario::new(which, self.seed)
                })
            })
            .collect()
    }

    pub fn rate_config(&self) -> RateConfig {
        let r = &self.rate;
        RateConfig::new(r.r, r.n, r.t, r.k_grid.clone(), r.noise_sd)
    }
}
