//! Residual-permutation bootstrap for the effect estimate.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tensorcf::SolverConfig;

use crate::effect::estimate_delta;
use crate::impute::{CompletionMethod, CompletionProblem};
use crate::panel::PanelDataset;
use crate::CausalError;

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    /// One effect estimate per replication, in replication order.
    pub draws: Vec<f64>,
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// 95% percentile interval for the effect estimate.
///
/// Each replication permutes the primary-layer residuals (transform scale)
/// within every period, adds them back to the fitted values, refits from a
/// cold start with `cfg`, and recomputes the estimate against the observed
/// `Y¹`. Control layers are never permuted. Periods with fewer than two
/// observed cells keep their residuals in place. Replication `r` draws from
/// stream `r` of a ChaCha8 generator seeded with `seed`, so results do not
/// depend on scheduling.
pub fn bootstrap_interval(
    d: &PanelDataset,
    method: CompletionMethod,
    cfg: &SolverConfig<f64>,
    reps: usize,
    seed: u64,
) -> Result<BootstrapResult, CausalError> {
    if reps < 2 {
        return Err(CausalError::Input(format!("bootstrap needs at least 2 replications, got {reps}")));
    }
    let problem = CompletionProblem::build(d, method)?;
    let y1 = d.y1_for_effect();
    let effect_of = |p: &CompletionProblem| -> Result<f64, CausalError> {
        let fit = p.solve(cfg)?;
        let y0 = p.primary_scale(&fit).map(|v| d.transform.inverse(v));
        Ok(estimate_delta(&y1, &y0, &d.w)?.delta_hat)
    };

    let fit = problem.solve(cfg)?;
    let y0 = problem.primary_scale(&fit).map(|v| d.transform.inverse(v));
    let point = estimate_delta(&y1, &y0, &d.w)?.delta_hat;

    let (n, t) = (d.n_units(), d.n_periods());
    let columns: Vec<Vec<usize>> = (0..t).map(|p| (0..n).filter(|&i| problem.y.is_observed(i, p)).collect()).collect();
    let residual = DMatrix::from_fn(n, t, |i, p| problem.y.values()[(i, p)] - fit.theta_hat[(i, p)]);

    let draws: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64);
            let mut values = problem.y.values().clone();
            for (p, rows) in columns.iter().enumerate() {
                if rows.len() < 2 {
                    continue;
                }
                let mut order = rows.clone();
                order.shuffle(&mut rng);
                for (&dst, &src) in rows.iter().zip(&order) {
                    values[(dst, p)] += residual[(src, p)] - residual[(dst, p)];
                }
            }
            let replica = CompletionProblem { y: problem.y.with_values(values)?, ..problem.clone() };
            effect_of(&replica)
        })
        .collect::<Result<_, _>>()?;

    let mut sorted = draws.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(BootstrapResult { point, lo: percentile(&sorted, 0.025), hi: percentile(&sorted, 0.975), draws })
}
