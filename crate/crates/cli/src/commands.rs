use std::path::Path;

use tensorcf::SolverConfig;
use tensorcf_baselines::{compare, LambdaChoice, Method};
use tensorcf_causal::{bootstrap_interval, select_lambda, PanelDataset};
use tensorcf_io::{
    imputation_rows, load_panel, sim_tables, write_table, BootstrapRow, ComparisonRow, CvRow, DrawRow, Gap, IoError,
    Manifest, RateRow, RateSummaryRow, RunConfig,
};
use tensorcf_sim::{rate_study, run_comparison_with, simulation_config, strictly_decreasing};

use crate::{Cli, Command, PanelArgs};

pub fn run(cli: Cli) -> Result<(), IoError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    match cli.command {
        Command::Fit(args) => fit(apply_panel_args(cfg, args)?),
        Command::Cv(args) => cv(apply_panel_args(cfg, args)?),
        Command::Bootstrap { panel, reps } => {
            let mut cfg = apply_panel_args(cfg, panel)?;
            if let Some(r) = reps {
                cfg.bootstrap_reps = r;
            }
            bootstrap(cfg)
        }
        Command::Simulate { scenario, reps, methods } => {
            if !scenario.is_empty() {
                cfg.simulate.scenarios = scenario;
            }
            if let Some(r) = reps {
                cfg.simulate.reps = r;
            }
            if !methods.is_empty() {
                cfg.simulate.methods = methods;
            }
            cfg.validate()?;
            simulate(cfg)
        }
        Command::Rate { seeds, k_grid, noise_sd } => {
            if let Some(s) = seeds {
                cfg.rate.seeds = s;
            }
            if !k_grid.is_empty() {
                cfg.rate.k_grid = k_grid;
            }
            if let Some(sd) = noise_sd {
                cfg.rate.noise_sd = sd;
            }
            rate(cfg)
        }
    }
}

fn apply_panel_args(mut cfg: RunConfig, args: PanelArgs) -> Result<RunConfig, IoError> {
    if let Some(data) = args.data {
        cfg.data = Some(data);
    }
    if !args.methods.is_empty() {
        cfg.methods = args.methods;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_output(cfg: &RunConfig) -> Result<&Path, IoError> {
    std::fs::create_dir_all(&cfg.output).map_err(|e| IoError::Io(format!("{}: {e}", cfg.output.display())))?;
    Ok(&cfg.output)
}

fn load(cfg: &RunConfig) -> Result<PanelDataset, IoError> {
    let path = cfg.require_panel()?;
    let loaded = load_panel(path, cfg)?;
    let d = loaded.dataset;
    log::info!(
        "loaded {} units x {} periods x {} outcomes, {} treated cells",
        d.n_units(),
        d.n_periods(),
        d.n_outcomes(),
        d.n_treated()
    );
    if !loaded.report.is_empty() {
        log::warn!("{} (unit, period, outcome) records are missing", loaded.report.gaps.len());
        let gaps: Vec<GapRow> = loaded.report.gaps.iter().map(GapRow::from).collect();
        write_table(&prepare_output(cfg)?.join("gaps.csv"), &gaps)?;
    }
    Ok(d)
}

#[derive(serde::Serialize)]
struct GapRow {
    unit_id: String,
    period: i64,
    outcome_id: String,
}

impl From<&Gap> for GapRow {
    fn from(g: &Gap) -> Self {
        Self { unit_id: g.unit.clone(), period: g.period, outcome_id: g.outcome.clone() }
    }
}

fn finish(command: &str, cfg: &RunConfig, mut outputs: Vec<String>) -> Result<(), IoError> {
    let dir = prepare_output(cfg)?;
    if dir.join("gaps.csv").exists() && matches!(command, "fit" | "cv" | "bootstrap") {
        outputs.push("gaps.csv".into());
    }
    Manifest::new(command, cfg, outputs).write(dir)?;
    println!("reports written to {}", dir.display());
    Ok(())
}

fn fit(cfg: RunConfig) -> Result<(), IoError> {
    let d = load(&cfg)?;
    let methods = cfg.methods()?;
    let results = compare(&d, &methods, &cfg.compare_config());
    let mut rows = Vec::new();
    let mut imputations = Vec::new();
    let mut first_error = None;
    for (m, r) in methods.iter().zip(results) {
        match r {
            Ok(report) => {
                rows.push(ComparisonRow::from_report(&report));
                imputations.extend(imputation_rows(&d, &report));
            }
            Err(e) => {
                log::error!("{m} failed: {e}");
                rows.push(ComparisonRow::failed(m.label(), &e.to_string()));
                first_error.get_or_insert(e);
            }
        }
    }
    let dir = prepare_output(&cfg)?;
    write_table(&dir.join("fit.csv"), &rows)?;
    write_table(&dir.join("imputations.csv"), &imputations)?;
    println!("{:<6} {:>12} {:>12} {:>10} {:>22}", "method", "in-MSE", "out-MSE", "delta", "interval");
    for r in &rows {
        let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
        let interval = match (r.ci_lo, r.ci_hi) {
            (Some(lo), Some(hi)) => format!("[{lo:.4}, {hi:.4}]"),
            _ => "-".into(),
        };
        println!(
            "{:<6} {:>12} {:>12} {:>10} {:>22}",
            r.method,
            f(r.in_sample_mse),
            f(r.out_of_sample_mse),
            f(r.delta_hat),
            interval
        );
    }
    finish("fit", &cfg, vec!["fit.csv".into(), "imputations.csv".into()])?;
    // Every method failing is a command failure; partial failures are
    // recorded in the table.
    match first_error {
        Some(e) if rows.iter().all(|r| !r.error.is_empty()) => Err(e.into()),
        _ => Ok(()),
    }
}

fn completion_methods(cfg: &RunConfig) -> Result<Vec<Method>, IoError> {
    let all = cfg.methods()?;
    let (keep, skip): (Vec<Method>, Vec<Method>) = all.into_iter().partition(|m| m.completion().is_some());
    for m in skip {
        log::warn!("{m} is not a completion method; skipped");
    }
    if keep.is_empty() {
        return Err(IoError::Usage("no completion method (TC, MC1, MC2) selected".into()));
    }
    Ok(keep)
}

fn cv(cfg: RunConfig) -> Result<(), IoError> {
    let d = load(&cfg)?;
    let grid = (!cfg.lambda_grid.is_empty()).then_some(cfg.lambda_grid.as_slice());
    let base = cfg.solver_config();
    let mut rows = Vec::new();
    for m in completion_methods(&cfg)? {
        let method = m.completion().expect("completion method");
        let res = select_lambda(&d, method, grid, Some(cfg.cv_folds), cfg.seed, &base)?;
        println!("{m}: lambda* = {:.6}", res.lambda_star);
        rows.extend(res.table.iter().map(|&(lambda, err)| CvRow {
            method: m.label().into(),
            lambda,
            cv_error: err,
            selected: lambda == res.lambda_star,
        }));
    }
    write_table(&prepare_output(&cfg)?.join("cv.csv"), &rows)?;
    finish("cv", &cfg, vec!["cv.csv".into()])
}

fn bootstrap(cfg: RunConfig) -> Result<(), IoError> {
    if cfg.bootstrap_reps < 2 {
        return Err(IoError::Config("bootstrap needs at least 2 replications".into()));
    }
    let d = load(&cfg)?;
    let base = cfg.solver_config();
    let mut rows = Vec::new();
    let mut draws = Vec::new();
    for m in completion_methods(&cfg)? {
        let method = m.completion().expect("completion method");
        let lambda = match cfg.lambda_choice() {
            LambdaChoice::Fixed(l) => l,
            LambdaChoice::CrossValidate { grid, folds } => {
                select_lambda(&d, method, grid.as_deref(), Some(folds), cfg.seed, &base)?.lambda_star
            }
        };
        let solver = SolverConfig { lambda, ..base.clone() };
        let b = bootstrap_interval(&d, method, &solver, cfg.bootstrap_reps, cfg.seed)?;
        println!("{m}: delta = {:.4}, 95% interval [{:.4}, {:.4}]", b.point, b.lo, b.hi);
        draws.extend(b.draws.iter().enumerate().map(|(rep, &v)| DrawRow {
            method: m.label().into(),
            rep,
            delta_hat: v,
        }));
        rows.push(BootstrapRow {
            method: m.label().into(),
            lambda,
            delta_hat: b.point,
            ci_lo: b.lo,
            ci_hi: b.hi,
            reps: cfg.bootstrap_reps,
        });
    }
    let dir = prepare_output(&cfg)?;
    write_table(&dir.join("bootstrap.csv"), &rows)?;
    write_table(&dir.join("bootstrap_draws.csv"), &draws)?;
    finish("bootstrap", &cfg, vec!["bootstrap.csv".into(), "bootstrap_draws.csv".into()])
}

fn simulate(cfg: RunConfig) -> Result<(), IoError> {
    let methods = cfg.sim_methods()?;
    let mut summary = Vec::new();
    let mut reps = Vec::new();
    for s in cfg.scenarios()? {
        let res = run_comparison_with(&s, &methods, cfg.simulate.reps, cfg.seed, &simulation_config(cfg.seed))?;
        let (sm, rp) = sim_tables(&res);
        for row in &sm {
            println!(
                "{} {:<5} mean delta {:>8} (truth {:.4}), failed {}",
                row.scenario,
                row.method,
                row.mean_delta_hat.map_or("-".into(), |v| format!("{v:.4}")),
                row.truth_delta,
                row.n_failed
            );
        }
        summary.extend(sm);
        reps.extend(rp);
    }
    let dir = prepare_output(&cfg)?;
    write_table(&dir.join("simulation_summary.csv"), &summary)?;
    write_table(&dir.join("simulation_reps.csv"), &reps)?;
    finish("simulate", &cfg, vec!["simulation_summary.csv".into(), "simulation_reps.csv".into()])
}

fn rate(cfg: RunConfig) -> Result<(), IoError> {
    let rc = cfg.rate_config();
    let rows = rate_study(&rc, cfg.seed, cfg.rate.seeds).map_err(IoError::from)?;
    if rows.is_empty() {
        return Err(IoError::Config("rate needs at least one seed".into()));
    }
    let share = rows.iter().filter(|r| strictly_decreasing(r)).count() as f64 / rows.len() as f64;
    let table: Vec<RateRow> = rows
        .iter()
        .enumerate()
        .flat_map(|(s, row)| row.iter().map(move |&(k, rmse)| RateRow { seed: cfg.seed + s as u64, k, rmse }))
        .collect();
    let summary: Vec<RateSummaryRow> = rc
        .k_grid
        .iter()
        .enumerate()
        .map(|(j, &k)| RateSummaryRow {
            k,
            mean_rmse: rows.iter().map(|r| r[j].1).sum::<f64>() / rows.len() as f64,
            share_strictly_decreasing: share,
        })
        .collect();
    for r in &summary {
        println!("K = {:<3} mean RMSE {:.4}", r.k, r.mean_rmse);
    }
    println!("strictly decreasing in {:.0}% of seeds", 100.0 * share);
    let dir = prepare_output(&cfg)?;
    write_table(&dir.join("rate.csv"), &table)?;
    write_table(&dir.join("rate_summary.csv"), &summary)?;
    finish("rate", &cfg, vec!["rate.csv".into(), "rate_summary.csv".into()])
}
