//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line
//! with the measured quantities, then asserts.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tensorcf::solver::{complete, complete_with_covariates, nuclear_norm, svt, CovariateModel};
use tensorcf::{fold, mode_product, tucker_compose, unfold, MaskedMatrix, Mode, SolverConfig, Tensor3};
use tensorcf_baselines::{fit_nb, Method, NbModelSpec, NbVariant};
use tensorcf_causal::{
    bootstrap_interval, estimate_delta, impute_with, CompletionMethod, ControlOutcome, PanelDataset,
};
use tensorcf_sim::{
    generate, main_effects_tensor, rate_study, run_comparison, strictly_decreasing, RateConfig, Scenario, SimResult,
    SimScenario, DEFAULT_METHODS,
};

const SIM_SEED: u64 = 2024;
const SIM_REPS: usize = 20;

fn report(n: usize, pass: bool, elapsed: Duration, budget: Duration, details: &str) {
    let in_time = elapsed <= budget;
    let ok = pass && in_time;
    println!(
        "criterion {n}: {} | {details} | {:.1}s of {}s budget",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    assert!(pass, "criterion {n} not met: {details}");
    assert!(in_time, "criterion {n} over its time budget: {elapsed:?} > {budget:?}");
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn means(res: &SimResult) -> String {
    res.per_method.iter().map(|m| format!("{}={:.3}", m.method, m.mean_delta_hat)).collect::<Vec<_>>().join(" ")
}

fn mean_delta(res: &SimResult, m: Method) -> f64 {
    res.method(m).expect("method was run").mean_delta_hat
}

#[test]
fn criterion_01_simulation_1_recovery() {
    let start = Instant::now();
    let res = run_comparison(&SimScenario::new(Scenario::S1, 0), &DEFAULT_METHODS, SIM_REPS, SIM_SEED).unwrap();
    let pass = res.per_method.iter().all(|m| m.n_failed() == 0 && (0.05..=0.20).contains(&m.mean_delta_hat));
    report(
        1,
        pass,
        start.elapsed(),
        Duration::from_secs(300),
        &format!("mean delta-hat over {SIM_REPS} reps, each in [0.05, 0.20]: {}", means(&res)),
    );
}

#[test]
fn criterion_02_simulation_2_separation() {
    let start = Instant::now();
    let res = run_comparison(&SimScenario::new(Scenario::S2, 0), &DEFAULT_METHODS, SIM_REPS, SIM_SEED).unwrap();
    let ll1 = mean_delta(&res, Method::LL1);
    let mc1 = mean_delta(&res, Method::MC1);
    let pass = (0.05..=0.20).contains(&ll1) && mc1 >= 0.33;
    report(
        2,
        pass,
        start.elapsed(),
        Duration::from_secs(300),
        &format!("LL1 in [0.05, 0.20]: {ll1:.3}; MC1 >= 0.33: {mc1:.3}; all: {}", means(&res)),
    );
}

#[test]
fn criterion_03_simulation_3_paradox() {
    let start = Instant::now();
    let res = run_comparison(&SimScenario::new(Scenario::S3, 0), &DEFAULT_METHODS, SIM_REPS, SIM_SEED).unwrap();
    let tc = mean_delta(&res, Method::TC);
    let others_ok = res.per_method.iter().filter(|m| m.method != Method::TC).all(|m| m.mean_delta_hat >= 0.55);
    report(
        3,
        tc < 0.25 && others_ok,
        start.elapsed(),
        Duration::from_secs(600),
        &format!("TC < 0.25 and every other method >= 0.55: {}", means(&res)),
    );
}

#[test]
fn criterion_04_noiseless_exact_recovery() {
    let start = Instant::now();
    let (n, t) = (50, 8);
    let truth = main_effects_tensor(n, t, -1.0, 4).unwrap();
    let mut y = unfold(&truth, Mode::One).matrix;
    let mut cells: Vec<(usize, usize)> = (0..t).flat_map(|p| (0..n).map(move |i| (i, p))).collect();
    cells.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
    let masked = &cells[..100];
    let mut mask = DMatrix::from_element(n, 2 * t, true);
    for &(i, p) in masked {
        mask[(i, p)] = false;
        y[(i, p)] = 0.0;
    }
    let cfg = SolverConfig { lambda: 0.0, tol: 1e-12, max_iters: 5000, continuation: true, ..SolverConfig::default() };
    let fit = complete(&MaskedMatrix::from_mask(y, mask).unwrap(), &cfg).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for &(i, p) in masked {
        num += (fit.theta_hat[(i, p)] - truth.get(i, p, 0)).powi(2);
        den += truth.get(i, p, 0).powi(2);
    }
    let rel = (num / den).sqrt();
    report(
        4,
        rel < 1e-3,
        start.elapsed(),
        Duration::from_secs(60),
        &format!("relative Frobenius error on 100 masked cells {rel:.2e} < 1e-3"),
    );
}

#[test]
fn criterion_05_rate_trend() {
    let start = Instant::now();
    let cfg = RateConfig::new(2, 50, 8, vec![1, 2, 4, 8], 1.0);
    let rows = rate_study(&cfg, 0, 50).unwrap();
    let decreasing = rows.iter().filter(|r| strictly_decreasing(r)).count();
    let mean_rmse: Vec<String> = (0..cfg.k_grid.len())
        .map(|k| format!("K={}:{:.3}", cfg.k_grid[k], rows.iter().map(|r| r[k].1).sum::<f64>() / rows.len() as f64))
        .collect();
    report(
        5,
        decreasing * 5 >= 50 * 4,
        start.elapsed(),
        Duration::from_secs(600),
        &format!("strictly decreasing RMSE in {decreasing}/50 seeds (need >= 40); mean RMSE {}", mean_rmse.join(" ")),
    );
}

fn prox_objective(x: &DMatrix<f64>, m: &DMatrix<f64>, lambda: f64) -> f64 {
    0.5 * (x - m).norm_squared() + lambda * nuclear_norm(x).unwrap()
}

#[test]
fn criterion_06_prox_oracle_and_monotone_trace() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut beaten = 0;
    for _ in 0..100 {
        let m = gaussian(&mut rng, 3, 3);
        let lambda = rng.random_range(0.05..2.0);
        let x = svt(&m, lambda).unwrap();
        let best = prox_objective(&x, &m, lambda);
        for c in 0..10_000 {
            let cand = match c % 3 {
                0 => &x + gaussian(&mut rng, 3, 3) * 0.01,
                1 => &x + gaussian(&mut rng, 3, 3) * 0.3,
                _ => gaussian(&mut rng, 3, 3) * 2.0,
            };
            if prox_objective(&cand, &m, lambda) < best - 1e-12 {
                beaten += 1;
            }
        }
    }

    let mut violations = 0;
    let mut instances = 0;
    for k in 0..40 {
        let (rows, cols) = (rng.random_range(3..20), rng.random_range(3..15));
        let y = gaussian(&mut rng, rows, 2) * gaussian(&mut rng, 2, cols) + gaussian(&mut rng, rows, cols) * 0.3;
        let mask = DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>() < 0.7);
        if !mask.iter().any(|&b| b) {
            continue;
        }
        let m = MaskedMatrix::from_mask(y, mask).unwrap();
        let cfg = SolverConfig::with_lambda(rng.random_range(0.01..3.0));
        let fit = if k % 2 == 0 {
            complete(&m, &cfg).unwrap()
        } else {
            let cov = CovariateModel::default().with_unit_time(gaussian(&mut rng, rows, cols));
            complete_with_covariates(&m, &cov, &cfg).unwrap()
        };
        instances += 1;
        violations += fit.objective_trace.windows(2).filter(|w| w[1] > w[0] + 1e-10 * w[0].abs().max(1.0)).count();
    }
    report(
        6,
        beaten == 0 && violations == 0,
        start.elapsed(),
        Duration::from_secs(60),
        &format!(
            "svt beaten by {beaten} of 1e6 candidates over 100 matrices; {violations} trace increases over {instances} soft-impute instances"
        ),
    );
}

fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows() * b.nrows(), a.ncols() * b.ncols(), |r, c| {
        a[(r / b.nrows(), c / b.ncols())] * b[(r % b.nrows(), c % b.ncols())]
    })
}

fn rel_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / a.amax().max(b.amax()).max(1.0)
}

#[test]
fn criterion_07_tensor_algebra_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let modes = [Mode::One, Mode::Two, Mode::Three];
    let (mut round_trip_failures, mut worst_identity, mut worst_commute, mut worst_kron) = (0, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..300 {
        let dims = [rng.random_range(1..=7), rng.random_range(1..=7), rng.random_range(1..=7)];
        let x = Tensor3::from_fn(dims, |_, _, _| rng.sample(StandardNormal)).unwrap();
        for mode in modes {
            let u = unfold(&x, mode);
            let back = fold(&u, dims).unwrap();
            if back != x || unfold(&back, mode).matrix != u.matrix {
                round_trip_failures += 1;
            }
            let d = dims[mode.axis()];
            let same = mode_product(&x, &DMatrix::identity(d, d), mode).unwrap();
            worst_identity =
                worst_identity.max(rel_gap(&unfold(&same, Mode::One).matrix, &unfold(&x, Mode::One).matrix));
        }
        for (ma, mb) in [(Mode::One, Mode::Two), (Mode::One, Mode::Three), (Mode::Two, Mode::Three)] {
            let (ra, rb) = (rng.random_range(1..=7), rng.random_range(1..=7));
            let a = gaussian(&mut rng, ra, dims[ma.axis()]);
            let b = gaussian(&mut rng, rb, dims[mb.axis()]);
            let ab = mode_product(&mode_product(&x, &a, ma).unwrap(), &b, mb).unwrap();
            let ba = mode_product(&mode_product(&x, &b, mb).unwrap(), &a, ma).unwrap();
            worst_commute = worst_commute.max(rel_gap(&unfold(&ab, Mode::One).matrix, &unfold(&ba, Mode::One).matrix));
        }
        let r: [usize; 3] = [rng.random_range(1..=7), rng.random_range(1..=7), rng.random_range(1..=7)];
        let a = gaussian(&mut rng, r[0], dims[0]);
        let b = gaussian(&mut rng, r[1], dims[1]);
        let c = gaussian(&mut rng, r[2], dims[2]);
        let tk = tucker_compose(&x, &a, &b, &c).unwrap();
        let identities = [
            (Mode::One, &a * unfold(&x, Mode::One).matrix * kron(&c, &b).transpose()),
            (Mode::Two, &b * unfold(&x, Mode::Two).matrix * kron(&c, &a).transpose()),
            (Mode::Three, &c * unfold(&x, Mode::Three).matrix * kron(&b, &a).transpose()),
        ];
        for (mode, expected) in identities {
            worst_kron = worst_kron.max(rel_gap(&unfold(&tk, mode).matrix, &expected));
        }
    }
    let pass = round_trip_failures == 0 && worst_identity <= 1e-12 && worst_commute <= 1e-12 && worst_kron <= 1e-10;
    report(
        7,
        pass,
        start.elapsed(),
        Duration::from_secs(30),
        &format!(
            "300 random tensors up to 7x7x7: {round_trip_failures} round-trip failures, identity {worst_identity:.1e}, commutation {worst_commute:.1e} (<= 1e-12), Tucker-Kronecker {worst_kron:.1e} (<= 1e-10)"
        ),
    );
}

/// Average of `(y0 − y1)/y1` over treated cells with a positive, finite `y1`.
fn one_pass_oracle(y1: &[f64], y0: &[f64], w: &[bool]) -> Option<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for k in 0..w.len() {
        if w[k] && y1[k].is_finite() && y1[k] != 0.0 {
            total += (y0[k] - y1[k]) / y1[k];
            n += 1;
        }
    }
    (n > 0).then(|| total / n as f64)
}

#[test]
fn criterion_08_estimand_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut checked, mut worst, mut zero_effect_ok) = (0, 0.0f64, true);
    while checked < 1000 {
        let (n, t) = (rng.random_range(1..12), rng.random_range(1..12));
        let y1 =
            DMatrix::from_fn(n, t, |_, _| if rng.random::<f64>() < 0.1 { 0.0 } else { rng.random_range(0.1..5e3) });
        let y0 = DMatrix::from_fn(n, t, |_, _| rng.random_range(0.0..5e3));
        let w = DMatrix::from_fn(n, t, |_, _| rng.random::<f64>() < 0.4);
        let Some(expected) = one_pass_oracle(y1.as_slice(), y0.as_slice(), w.as_slice()) else {
            continue;
        };
        let got = estimate_delta(&y1, &y0, &w).unwrap().delta_hat;
        worst = worst.max((got - expected).abs() / expected.abs().max(1.0));
        zero_effect_ok &= estimate_delta(&y1, &y1, &w).unwrap().delta_hat == 0.0;
        checked += 1;
    }
    report(
        8,
        worst <= 1e-12 && zero_effect_ok,
        start.elapsed(),
        Duration::from_secs(10),
        &format!("1000 random triples: worst relative gap {worst:.1e} (<= 1e-12); zero effect when Y0 = Y1: {zero_effect_ok}"),
    );
}

#[test]
fn criterion_09_bootstrap_contract() {
    let start = Instant::now();
    // λ = 0 reproduces every observed entry, so all residuals are exactly zero.
    let flat = main_effects_tensor(15, 6, -1.0, 9).unwrap();
    let w = DMatrix::from_fn(15, 6, |i, t| (i + t) % 5 == 0);
    let y = DMatrix::from_fn(15, 6, |i, t| flat.get(i, t, 0).exp_m1());
    let z = DMatrix::from_fn(15, 6, |i, t| flat.get(i, t, 1).exp_m1());
    let d0 = PanelDataset::new(y, w).unwrap().with_control(ControlOutcome::new("z", z));
    let exact = SolverConfig { lambda: 0.0, max_iters: 50, ..SolverConfig::default() };
    let degenerate = bootstrap_interval(&d0, CompletionMethod::Tensor, &exact, 20, 1).unwrap();
    let zero_width = degenerate.lo == degenerate.point
        && degenerate.hi == degenerate.point
        && degenerate.draws.iter().all(|&v| v == degenerate.point);

    let data = generate(&SimScenario::new(Scenario::S1, 9)).unwrap();
    let cfg = SolverConfig { lambda: 2.0, continuation: true, ..SolverConfig::default() };
    let timed = Instant::now();
    let a = bootstrap_interval(&data.dataset, CompletionMethod::Tensor, &cfg, 100, 99).unwrap();
    let hundred = timed.elapsed();
    let b = bootstrap_interval(&data.dataset, CompletionMethod::Tensor, &cfg, 100, 99).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let identical =
        bits(&a.draws) == bits(&b.draws) && a.lo.to_bits() == b.lo.to_bits() && a.hi.to_bits() == b.hi.to_bits();
    report(
        9,
        zero_width && identical && hundred <= Duration::from_secs(300),
        start.elapsed(),
        Duration::from_secs(600),
        &format!(
            "zero-residual interval degenerate at the point: {zero_width}; byte-identical draws under a fixed seed: {identical}; 100 reps on 50x8x2 in {:.1}s (< 300s)",
            hundred.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_10_reductions() {
    let start = Instant::now();
    let mut d = generate(&SimScenario::new(Scenario::S1, 10)).unwrap().dataset;
    d.controls.clear();
    let mut identical = true;
    for cfg in
        [SolverConfig::with_lambda(0.5), SolverConfig { lambda: 0.05, continuation: true, ..SolverConfig::default() }]
    {
        let tc = impute_with(&d, CompletionMethod::Tensor, &cfg).unwrap();
        let mc = impute_with(&d, CompletionMethod::Matrix1, &cfg).unwrap();
        identical &= tc.y0_hat == mc.y0_hat;
    }
    let ll1 = fit_nb(&d, &NbModelSpec::new(NbVariant::LL1)).unwrap();
    let ll3 = fit_nb(&d, &NbModelSpec::new(NbVariant::LL3)).unwrap();
    let gap = (&ll1.coefficients - &ll3.coefficients).amax();
    report(
        10,
        identical && gap <= 1e-8,
        start.elapsed(),
        Duration::from_secs(60),
        &format!("K=1 tensor and matrix completion identical: {identical}; LL3 vs LL1 max coefficient gap {gap:.1e} (<= 1e-8)"),
    );
}
