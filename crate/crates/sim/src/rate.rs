//! Low-rank tensor constructions and the error-versus-K experiment.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use tensorcf::{complete, tucker_compose, unfold, MaskedMatrix, Mode, SolverConfig, Tensor3};

use crate::SimError;

/// Log-mean tensor of the two-outcome main-effects model as a Tucker
/// product: `A = [θ 1]`, `B = [1 η]`, `C = [[1, 0], [1, 1]]` and a core whose
/// first slice is `I₂` and second slice carries `shift` at (2, 1). Layer 1
/// is `θ_i + η_t`; layer 2 adds `shift`. Effects are drawn from N(4, 1).
pub fn main_effects_tensor(n: usize, t: usize, shift: f64, seed: u64) -> Result<Tensor3<f64>, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(4.0, 1.0).expect("valid normal");
    let theta: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    let eta: Vec<f64> = (0..t).map(|_| normal.sample(&mut rng)).collect();
    let a = DMatrix::from_fn(n, 2, |i, c| if c == 0 { theta[i] } else { 1.0 });
    let b = DMatrix::from_fn(t, 2, |p, c| if c == 0 { 1.0 } else { eta[p] });
    let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
    let core = Tensor3::from_fn([2, 2, 2], |p, q, r| match (p, q, r) {
        (0, 0, 0) | (1, 1, 0) => 1.0,
        (1, 0, 1) => shift,
        _ => 0.0,
    })?;
    Ok(tucker_compose(&core, &a, &b, &c)?)
}

/// Settings of the error-versus-K experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RateConfig {
    pub r: usize,
    pub n: usize,
    pub t: usize,
    pub k_grid: Vec<usize>,
    pub noise_sd: f64,
    /// Share of layer-1 cells observed in every row; the rest are masked.
    pub observed_fraction: f64,
    /// λ = `lambda_scale · noise_sd · (√N + √(T·K))`.
    pub lambda_scale: f64,
}

impl RateConfig {
    pub fn new(r: usize, n: usize, t: usize, k_grid: Vec<usize>, noise_sd: f64) -> Self {
        Self { r, n, t, k_grid, noise_sd, observed_fraction: 7.0 / 8.0, lambda_scale: 1.0 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let k_min = self.k_grid.iter().copied().min().unwrap_or(0);
        if self.k_grid.is_empty() || k_min == 0 {
            return Err(SimError::Input("K grid must be nonempty and positive".into()));
        }
        if self.r == 0 || self.r > self.n.min(self.t * k_min) {
            return Err(SimError::Input(format!(
                "rank {} must be between 1 and min(N, T*min K) = {}",
                self.r,
                self.n.min(self.t * k_min)
            )));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(SimError::Input(format!("noise sd must be nonnegative, got {}", self.noise_sd)));
        }
        let per_row = self.observed_per_row();
        if per_row == 0 || per_row >= self.t {
            return Err(SimError::Input(format!(
                "observed fraction {} leaves {per_row} of {} cells per row observed",
                self.observed_fraction, self.t
            )));
        }
        Ok(())
    }

    fn observed_per_row(&self) -> usize {
        (self.observed_fraction * self.t as f64).round() as usize
    }

    pub fn lambda(&self, k: usize) -> f64 {
        self.lambda_scale * self.noise_sd * ((self.n as f64).sqrt() + ((self.t * k) as f64).sqrt())
    }
}

/// Masked-cell RMSE for each K in the grid, for one seed.
///
/// One draw of factors `A` (N×r), `B` (T×r), control loadings `Γ_k` (r×r),
/// noise and layer-1 mask is shared by every K, so the problems are nested:
/// layer 1 is `A Bᵀ`, control `k` is `A Γ_k Bᵀ`, controls are fully observed.
pub fn rate_experiment(cfg: &RateConfig, seed: u64) -> Result<Vec<(usize, f64)>, SimError> {
    cfg.validate()?;
    let (n, t, r) = (cfg.n, cfg.t, cfg.r);
    let k_max = *cfg.k_grid.iter().max().expect("validated nonempty");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |rows: usize, cols: usize| DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng));
    let a = gauss(n, r);
    let b = gauss(t, r);
    let loadings: Vec<DMatrix<f64>> = (1..k_max).map(|_| gauss(r, r)).collect();
    let noise = gauss(n, t * k_max) * cfg.noise_sd;
    let mut observed = DMatrix::from_element(n, t, false);
    let per_row = cfg.observed_per_row();
    for i in 0..n {
        let mut cols: Vec<usize> = (0..t).collect();
        cols.shuffle(&mut rng);
        for &p in &cols[..per_row] {
            observed[(i, p)] = true;
        }
    }
    let core = Tensor3::from_fn([r, r, k_max], |p, q, k| {
        if k == 0 {
            if p == q {
                1.0
            } else {
                0.0
            }
        } else {
            loadings[k - 1][(p, q)]
        }
    })?;
    let truth = unfold(&tucker_compose(&core, &a, &b, &DMatrix::identity(k_max, k_max))?, Mode::One).matrix;

    cfg.k_grid
        .par_iter()
        .map(|&k| {
            let width = t * k;
            let values = truth.columns(0, width) + noise.columns(0, width);
            let mask = DMatrix::from_fn(n, width, |i, c| c >= t || observed[(i, c)]);
            let y = MaskedMatrix::from_mask(values, mask)?;
            let solver = SolverConfig {
                lambda: cfg.lambda(k),
                tol: 1e-9,
                max_iters: 3000,
                continuation: true,
                ..SolverConfig::default()
            };
            let fit = complete(&y, &solver)?;
            let mut sum = 0.0;
            let mut count = 0usize;
            for p in 0..t {
                for i in 0..n {
                    if !observed[(i, p)] {
                        sum += (fit.theta_hat[(i, p)] - truth[(i, p)]).powi(2);
                        count += 1;
                    }
                }
            }
            Ok((k, (sum / count as f64).sqrt()))
        })
        .collect()
}

/// [`rate_experiment`] over seeds `seed, seed + 1, …`, run concurrently.
pub fn rate_study(cfg: &RateConfig, seed: u64, n_seeds: usize) -> Result<Vec<Vec<(usize, f64)>>, SimError> {
    (0..n_seeds as u64).into_par_iter().map(|s| rate_experiment(cfg, seed + s)).collect()
}

/// True when the RMSE strictly decreases along the K grid.
pub fn strictly_decreasing(row: &[(usize, f64)]) -> bool {
    row.windows(2).all(|w| w[1].1 < w[0].1)
}
