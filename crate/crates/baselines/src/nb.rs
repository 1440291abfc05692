//! Negative-binomial log-linear regression by Fisher scoring with a
//! profile-likelihood dispersion update.
//!
//! Parameterization: mean `m`, variance `m + φ m²` (size `1/φ`).

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::BaselineError;

/// Dispersion search interval; the lower end stands in for the Poisson limit.
pub const PHI_MIN: f64 = 1e-12;
pub const PHI_MAX: f64 = 1e3;
const PHI_GRID: usize = 61;
const STIRLING_SIZE: f64 = 100.0;
const MAX_INNER: usize = 100;
const MAX_HALVINGS: usize = 40;

/// How the dispersion `φ` is handled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dispersion {
    /// Maximum likelihood, alternating with the coefficient updates.
    Estimate,
    Fixed(f64),
    /// `φ = 0`.
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NbOptions {
    pub dispersion: Dispersion,
    pub max_outer: usize,
    /// Convergence threshold on the change of the joint log-likelihood,
    /// relative to `max(1, |ll|)`.
    pub tol: f64,
}

impl Default for NbOptions {
    fn default() -> Self {
        Self { dispersion: Dispersion::Estimate, max_outer: 200, tol: 1e-8 }
    }
}

/// Result of a fit on an explicit design.
#[derive(Debug, Clone)]
pub struct GlmFit {
    pub coefficients: DVector<f64>,
    /// Dispersion per group; a single entry when shared.
    pub phi: Vec<f64>,
    /// Inverse observed information for the coefficients at the final `φ`.
    pub covariance: DMatrix<f64>,
    /// The information matrix was singular; `covariance` is a pseudo-inverse.
    pub covariance_singular: bool,
    pub log_lik: f64,
    /// Joint log-likelihood after every outer iteration.
    pub log_lik_trace: Vec<f64>,
    pub converged: bool,
    pub outer_iterations: usize,
    /// Some dispersion estimate hit the lower end of its range.
    pub poisson_limit: bool,
}

/// `ln Γ(θ + y) − ln Γ(θ)`, accurate for large `θ`.
fn ln_gamma_ratio(theta: f64, y: f64) -> f64 {
    if y == 0.0 {
        return 0.0;
    }
    if theta < STIRLING_SIZE {
        return ln_gamma(theta + y) - ln_gamma(theta);
    }
    let s = |z: f64| {
        let z2 = z * z;
        1.0 / (12.0 * z) - 1.0 / (360.0 * z * z2) + 1.0 / (1260.0 * z * z2 * z2)
    };
    (theta - 0.5) * (y / theta).ln_1p() + y * (theta + y).ln() - y + s(theta + y) - s(theta)
}

/// Log-likelihood of one observation with mean `m`.
pub fn nb_log_lik(y: f64, m: f64, phi: f64) -> f64 {
    let base = -ln_gamma(y + 1.0);
    if phi <= 0.0 {
        let ym = if y == 0.0 { 0.0 } else { y * m.ln() };
        return base + ym - m;
    }
    let theta = 1.0 / phi;
    let ym = if y == 0.0 { 0.0 } else { y * (m.ln() - (theta + m).ln()) };
    base + ln_gamma_ratio(theta, y) - theta * (m / theta).ln_1p() + ym
}

pub(crate) struct Problem<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a [f64],
    pub offset: &'a [f64],
    /// Dispersion group of every row.
    pub groups: &'a [usize],
}

impl Problem<'_> {
    fn means(&self, beta: &DVector<f64>) -> Vec<f64> {
        let eta = self.x * beta;
        eta.iter().zip(self.offset).map(|(e, o)| (e + o).exp()).collect()
    }

    fn row_phi<'b>(&'b self, phi: &'b [f64]) -> impl Iterator<Item = f64> + 'b {
        self.groups.iter().map(move |&g| phi[g])
    }

    fn log_lik_at(&self, m: &[f64], phi: &[f64]) -> f64 {
        self.y.iter().zip(m).zip(self.row_phi(phi)).map(|((&y, &m), p)| nb_log_lik(y, m, p)).sum()
    }

    /// Log-likelihood of the rows in group `g` only.
    fn group_log_lik(&self, m: &[f64], g: usize, phi: f64) -> f64 {
        (0..m.len()).filter(|&r| self.groups[r] == g).map(|r| nb_log_lik(self.y[r], m[r], phi)).sum()
    }

    pub fn log_lik(&self, beta: &DVector<f64>, phi: &[f64]) -> f64 {
        self.log_lik_at(&self.means(beta), phi)
    }

    pub fn score(&self, beta: &DVector<f64>, phi: &[f64]) -> DVector<f64> {
        let m = self.means(beta);
        let r = DVector::from_iterator(
            m.len(),
            self.y.iter().zip(&m).zip(self.row_phi(phi)).map(|((&y, &m), p)| (y - m) / (1.0 + p * m)),
        );
        self.x.transpose() * r
    }

    /// `Xᵀ diag(d) X`.
    fn weighted_gram(&self, d: &[f64]) -> DMatrix<f64> {
        let mut xw = self.x.clone();
        for (mut row, &w) in xw.row_iter_mut().zip(d) {
            row *= w;
        }
        self.x.transpose() * xw
    }

    /// Observed information for the coefficients.
    pub fn information(&self, beta: &DVector<f64>, phi: &[f64]) -> DMatrix<f64> {
        let m = self.means(beta);
        let d: Vec<f64> = self
            .y
            .iter()
            .zip(&m)
            .zip(self.row_phi(phi))
            .map(|((&y, &m), p)| m * (1.0 + p * y) / (1.0 + p * m).powi(2))
            .collect();
        self.weighted_gram(&d)
    }

    /// Fisher scoring for the coefficients at fixed `φ`, with step halving.
    fn scoring(&self, mut beta: DVector<f64>, phi: &[f64]) -> Result<DVector<f64>, BaselineError> {
        let mut ll = self.log_lik(&beta, phi);
        for _ in 0..MAX_INNER {
            let m = self.means(&beta);
            let w: Vec<f64> = m.iter().zip(self.row_phi(phi)).map(|(&m, p)| m / (1.0 + p * m)).collect();
            let eta = self.x * &beta;
            let z: Vec<f64> = (0..m.len()).map(|i| w[i] * (eta[i] + (self.y[i] - m[i]) / m[i])).collect();
            let rhs = self.x.transpose() * DVector::from_vec(z);
            let gram = self.weighted_gram(&w);
            let target = gram
                .clone()
                .cholesky()
                .map(|c| c.solve(&rhs))
                .or_else(|| gram.clone().lu().solve(&rhs))
                .ok_or_else(|| BaselineError::Numerical("scoring system is singular".into()))?;
            let step = &target - &beta;
            let mut scale = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                let cand = &beta + &step * scale;
                let cand_ll = self.log_lik(&cand, phi);
                // Rounding in the summed likelihood must not reject a Newton step.
                if cand_ll.is_finite() && cand_ll >= ll - 1e-13 * ll.abs().max(1.0) {
                    accepted = Some((cand, cand_ll));
                    break;
                }
                scale *= 0.5;
            }
            let Some((cand, cand_ll)) = accepted else {
                break;
            };
            let moved = (&cand - &beta).amax();
            beta = cand;
            ll = cand_ll;
            if moved < 1e-11 * (1.0 + beta.amax()) {
                break;
            }
        }
        Ok(beta)
    }

    /// Maximize the group-`g` likelihood over `ln φ` on `[PHI_MIN, PHI_MAX]`.
    fn best_phi(&self, m: &[f64], g: usize) -> f64 {
        let f = |lp: f64| self.group_log_lik(m, g, lp.exp());
        let (lo, hi) = (PHI_MIN.ln(), PHI_MAX.ln());
        let grid: Vec<f64> = (0..PHI_GRID).map(|k| lo + (hi - lo) * k as f64 / (PHI_GRID - 1) as f64).collect();
        let values: Vec<f64> = grid.iter().map(|&v| f(v)).collect();
        let best = values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(k, _)| k).unwrap_or(0);
        let mut a = grid[best.saturating_sub(1)];
        let mut b = grid[(best + 1).min(PHI_GRID - 1)];
        let golden = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - golden * (b - a);
        let mut d = a + golden * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        while b - a > 1e-10 {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - golden * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + golden * (b - a);
                fd = f(d);
            }
        }
        let mid = 0.5 * (a + b);
        let (cand, best_ll) = if f(mid) >= values[best] { (mid, f(mid)) } else { (grid[best], values[best]) };
        // Below some φ the likelihood is flat to rounding; report the boundary.
        if values[0] >= best_ll - 1e-12 * best_ll.abs().max(1.0) {
            return PHI_MIN;
        }
        cand.exp().clamp(PHI_MIN, PHI_MAX)
    }
}

fn initial_beta(p: &Problem) -> DVector<f64> {
    // Least squares on log(y + 0.5) − offset.
    let target = DVector::from_iterator(p.y.len(), p.y.iter().zip(p.offset).map(|(&y, &o)| (y + 0.5).ln() - o));
    let gram = p.x.transpose() * p.x;
    let rhs = p.x.transpose() * target;
    gram.cholesky().map(|c| c.solve(&rhs)).unwrap_or_else(|| DVector::zeros(p.x.ncols()))
}

fn invert_information(info: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    if let Some(c) = info.clone().cholesky() {
        let inv = c.inverse();
        if inv.iter().all(|v| v.is_finite()) {
            return ((&inv + inv.transpose()) * 0.5, false);
        }
    }
    let pinv = info
        .clone()
        .pseudo_inverse(1e-12 * info.amax().max(1e-300))
        .unwrap_or_else(|_| DMatrix::zeros(info.nrows(), info.ncols()));
    (pinv, true)
}

/// Input to [`fit_glm`]: design, outcomes, offsets and dispersion groups.
#[derive(Debug, Clone, Copy)]
pub struct GlmData<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a [f64],
    pub offset: &'a [f64],
    /// Row-to-group map for separate dispersions; `None` shares one `φ`.
    pub groups: Option<&'a [usize]>,
}

impl<'a> GlmData<'a> {
    pub fn new(x: &'a DMatrix<f64>, y: &'a [f64], offset: &'a [f64]) -> Self {
        Self { x, y, offset, groups: None }
    }
}

fn column_rank(x: &DMatrix<f64>) -> usize {
    let svd = x.clone().svd(false, false);
    let top = svd.singular_values.max();
    svd.singular_values.iter().filter(|&&s| s > 1e-9 * top.max(1e-300)).count()
}

/// Fit a negative-binomial log-linear model.
pub fn fit_glm(data: GlmData, opts: &NbOptions) -> Result<GlmFit, BaselineError> {
    let GlmData { x, y, offset, .. } = data;
    let n = y.len();
    if x.nrows() != n || offset.len() != n {
        return Err(BaselineError::Input(format!(
            "design has {} rows, {} outcomes, {} offsets",
            x.nrows(),
            n,
            offset.len()
        )));
    }
    if n == 0 || x.ncols() == 0 {
        return Err(BaselineError::Input("empty design".into()));
    }
    if let Some(bad) = y.iter().find(|&&v| !(v >= 0.0 && v.is_finite())) {
        return Err(BaselineError::Input(format!("outcomes must be nonnegative counts, found {bad}")));
    }
    if x.iter().chain(offset).any(|v| !v.is_finite()) {
        return Err(BaselineError::Input("design or offsets contain non-finite values".into()));
    }
    let rank = column_rank(x);
    if rank < x.ncols() {
        return Err(BaselineError::Input(format!("design is rank deficient ({rank} of {} columns)", x.ncols())));
    }
    let shared = vec![0; n];
    let groups = match data.groups {
        Some(g) if g.len() != n => {
            return Err(BaselineError::Input(format!("{} dispersion groups for {n} rows", g.len())));
        }
        Some(g) => g,
        None => &shared,
    };
    let n_groups = groups.iter().max().map_or(1, |g| g + 1);

    let problem = Problem { x, y, offset, groups };
    let start = match opts.dispersion {
        Dispersion::Estimate => 0.1,
        Dispersion::Fixed(v) if v >= 0.0 && v.is_finite() => v,
        Dispersion::Fixed(v) => return Err(BaselineError::Input(format!("invalid fixed dispersion {v}"))),
        Dispersion::Poisson => 0.0,
    };
    let mut phi = vec![start; n_groups];
    let mut beta = initial_beta(&problem);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut ll_prev = f64::NEG_INFINITY;
    let mut outer = 0;
    while outer < opts.max_outer {
        outer += 1;
        beta = problem.scoring(beta, &phi)?;
        if opts.dispersion == Dispersion::Estimate {
            let m = problem.means(&beta);
            for g in 0..n_groups {
                let cand = problem.best_phi(&m, g);
                if problem.group_log_lik(&m, g, cand) >= problem.group_log_lik(&m, g, phi[g]) {
                    phi[g] = cand;
                }
            }
        }
        let ll = problem.log_lik(&beta, &phi);
        trace.push(ll);
        if (ll - ll_prev).abs() < opts.tol * ll.abs().max(1.0) {
            converged = true;
            break;
        }
        ll_prev = ll;
    }
    // The last dispersion update moved the coefficient optimum slightly.
    if opts.dispersion == Dispersion::Estimate {
        beta = problem.scoring(beta, &phi)?;
    }
    if !converged {
        log::warn!("negative-binomial fit did not converge in {} outer iterations", opts.max_outer);
    }
    let poisson_limit = opts.dispersion == Dispersion::Estimate && phi.iter().any(|&p| p <= PHI_MIN * (1.0 + 1e-9));
    if poisson_limit {
        log::warn!("dispersion estimate reached its lower bound; using the Poisson limit");
    }
    let (covariance, covariance_singular) = invert_information(&problem.information(&beta, &phi));
    Ok(GlmFit {
        log_lik: problem.log_lik(&beta, &phi),
        coefficients: beta,
        phi,
        covariance,
        covariance_singular,
        log_lik_trace: trace,
        converged,
        outer_iterations: outer,
        poisson_limit,
    })
}

/// Score vector `Xᵀ (y − m)/(1 + φ m)` at given coefficients and group dispersions.
pub fn score(data: GlmData, beta: &DVector<f64>, phi: &[f64]) -> DVector<f64> {
    let shared = vec![0; data.y.len()];
    let groups = data.groups.unwrap_or(&shared);
    Problem { x: data.x, y: data.y, offset: data.offset, groups }.score(beta, phi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stirling_ratio_matches_direct_gamma() {
        for &theta in &[100.0, 250.0, 1e4] {
            for &y in &[0.0, 1.0, 7.0, 300.0] {
                let direct = ln_gamma(theta + y) - ln_gamma(theta);
                let approx = ln_gamma_ratio(theta, y);
                assert!((direct - approx).abs() < 1e-9 * direct.abs().max(1.0), "{theta} {y}");
            }
        }
    }

    #[test]
    fn huge_size_log_lik_approaches_poisson() {
        for &(y, m) in &[(0.0, 2.5), (3.0, 2.5), (4000.0, 3900.0)] {
            let p = nb_log_lik(y, m, 0.0);
            let nb = nb_log_lik(y, m, 1e-12);
            assert!((p - nb).abs() < 1e-6, "{y} {m}: {p} vs {nb}");
        }
    }

    #[test]
    fn nb_log_lik_matches_pmf_by_hand() {
        // size 2, mean 3, y = 1: C(2,1) (2/5)^2 (3/5) = 0.192
        let ll = nb_log_lik(1.0, 3.0, 0.5);
        assert!((ll - 0.192f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn intercept_only_mean() {
        let y = [3.0, 0.0, 7.0, 2.0, 11.0, 4.0];
        let x = DMatrix::from_element(6, 1, 1.0);
        let fit = fit_glm(GlmData::new(&x, &y, &[0.0; 6]), &NbOptions::default()).unwrap();
        let mean = y.iter().sum::<f64>() / 6.0;
        assert!((fit.coefficients[0].exp() - mean).abs() < 1e-8);
        assert!(fit.converged);
        assert!(fit.phi[0] > 0.0);
    }

    #[test]
    fn rank_deficient_design_rejected() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(matches!(
            fit_glm(GlmData::new(&x, &[1.0, 2.0, 3.0], &[0.0; 3]), &NbOptions::default()),
            Err(BaselineError::Input(_))
        ));
        let x = DMatrix::from_element(2, 1, 1.0);
        assert!(fit_glm(GlmData::new(&x, &[1.0, -1.0], &[0.0; 2]), &NbOptions::default()).is_err());
    }

    #[test]
    fn equidispersed_data_hits_poisson_limit() {
        // Variance below the mean: the likelihood is maximized at φ → 0.
        let y = [5.0, 5.0, 6.0, 4.0, 5.0, 5.0, 6.0, 4.0];
        let x = DMatrix::from_element(8, 1, 1.0);
        let fit = fit_glm(GlmData::new(&x, &y, &[0.0; 8]), &NbOptions::default()).unwrap();
        assert!(fit.poisson_limit);
    }
}
