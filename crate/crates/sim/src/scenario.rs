//! Simulated count panels with a known counterfactual.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use tensorcf_causal::{ControlOutcome, PanelDataset};

use crate::mask::{mcar_mask, propensity_mask, within_season_mask};
use crate::SimError;

/// Data-generating process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Main effects only: `μ = θ_i + η_t` (control adds `τ`).
    S1,
    /// Adds a unit-period interaction `γ_it` to both outcomes.
    S2,
    /// S2 plus Poisson(`δ_t`) counts added to the primary outcome only.
    S3,
}

impl std::str::FromStr for Scenario {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(Scenario::S1),
            "S2" => Ok(Scenario::S2),
            "S3" => Ok(Scenario::S3),
            _ => Err(SimError::Input(format!("unknown scenario '{s}' (expected S1, S2 or S3)"))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

/// How treated cells are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mechanism {
    /// Uniformly at random without replacement.
    Mcar,
    /// The same number per period, remainders to the earliest periods.
    McarWithinSeason,
    /// Weighted toward cells with low standardized `Y⁰`.
    Propensity,
}

impl std::str::FromStr for Mechanism {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "mcar" => Ok(Mechanism::Mcar),
            "mcar_within_season" | "within_season" => Ok(Mechanism::McarWithinSeason),
            "propensity" => Ok(Mechanism::Propensity),
            _ => Err(SimError::Input(format!(
                "unknown mechanism '{s}' (expected mcar, mcar_within_season or propensity)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub which: Scenario,
    pub n: usize,
    pub t: usize,
    /// Mean and sd of both `θ_i` and `η_t`.
    pub effect_mean: f64,
    pub effect_sd: f64,
    /// Sd of `γ_it` around `−(i + t)/30` (one-based indices).
    pub gamma_sd: f64,
    /// Log-scale shift of the control outcome.
    pub tau: f64,
    /// Negative-binomial dispersion; size is `1/φ`.
    pub phi: f64,
    /// `δ_t` in odd periods (one-based); zero in even ones.
    pub delta_amplitude: f64,
    /// `Y¹ = effect_ratio · Y⁰`.
    pub effect_ratio: f64,
    pub n_missing: usize,
    pub mechanism: Mechanism,
    pub seed: u64,
}

impl SimScenario {
    pub fn new(which: Scenario, seed: u64) -> Self {
        Self {
            which,
            n: 50,
            t: 8,
            effect_mean: 4.0,
            effect_sd: 1.0,
            gamma_sd: 1.0,
            tau: -1.0,
            phi: 0.01,
            delta_amplitude: 5000.0,
            effect_ratio: 0.9,
            n_missing: 100,
            mechanism: Mechanism::Mcar,
            seed,
        }
    }

    /// `Δ = 1/ratio − 1`, the same for every treated cell.
    pub fn truth_delta(&self) -> f64 {
        1.0 / self.effect_ratio - 1.0
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n == 0 || self.t == 0 {
            return Err(SimError::Input("panel needs at least one unit and one period".into()));
        }
        if self.n_missing > self.n * self.t {
            return Err(SimError::Input(format!(
                "{} masked cells exceed the {} cells of the panel",
                self.n_missing,
                self.n * self.t
            )));
        }
        let positive = [("phi", self.phi), ("effect_ratio", self.effect_ratio)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::Input(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in
            [("effect_sd", self.effect_sd), ("gamma_sd", self.gamma_sd), ("delta_amplitude", self.delta_amplitude)]
        {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::Input(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if !self.effect_mean.is_finite() || !self.tau.is_finite() {
            return Err(SimError::Input("effect_mean and tau must be finite".into()));
        }
        Ok(())
    }
}

/// A generated panel with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimData {
    pub dataset: PanelDataset,
    pub y0_truth: DMatrix<f64>,
    pub truth_delta: f64,
    /// Periods whose propensity weights fell back to uniform.
    pub flagged_periods: Vec<usize>,
}

/// Negative-binomial draw with mean `m` and dispersion `φ`, as a gamma
/// mixture of Poissons.
pub fn nb_sample(rng: &mut ChaCha8Rng, m: f64, phi: f64) -> f64 {
    let rate = Gamma::new(1.0 / phi, m * phi).expect("positive shape and scale").sample(rng);
    poisson_sample(rng, rate)
}

fn poisson_sample(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    if rate <= 0.0 {
        return 0.0;
    }
    Poisson::new(rate).expect("positive rate").sample(rng)
}

/// Draw a panel. Stream 0 of a ChaCha8 generator seeded with `s.seed`
/// drives the outcomes (in the order θ, η, γ, Y⁰, Z, V); stream 1 drives
/// the treatment mask.
pub fn generate(s: &SimScenario) -> Result<SimData, SimError> {
    s.validate()?;
    let (n, t) = (s.n, s.t);
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let effect = Normal::new(s.effect_mean, s.effect_sd).map_err(|e| SimError::Input(e.to_string()))?;
    let theta: Vec<f64> = (0..n).map(|_| effect.sample(&mut rng)).collect();
    let eta: Vec<f64> = (0..t).map(|_| effect.sample(&mut rng)).collect();
    let gamma = DMatrix::from_fn(n, t, |i, p| {
        let mean = -((i + 1 + p + 1) as f64) / 30.0;
        mean + s.gamma_sd * Normal::new(0.0, 1.0).unwrap().sample(&mut rng)
    });
    let interaction = s.which != Scenario::S1;
    let mu = DMatrix::from_fn(n, t, |i, p| theta[i] + eta[p] + if interaction { gamma[(i, p)] } else { 0.0 });
    let mut y0 = DMatrix::from_fn(n, t, |i, p| nb_sample(&mut rng, mu[(i, p)].exp(), s.phi));
    let z = DMatrix::from_fn(n, t, |i, p| nb_sample(&mut rng, (mu[(i, p)] + s.tau).exp(), s.phi));
    if s.which == Scenario::S3 {
        for p in 0..t {
            let delta = if (p + 1) % 2 == 1 { s.delta_amplitude } else { 0.0 };
            for i in 0..n {
                y0[(i, p)] += poisson_sample(&mut rng, delta);
            }
        }
    }

    let mut mask_rng = ChaCha8Rng::seed_from_u64(s.seed);
    mask_rng.set_stream(1);
    let (w, flagged_periods) = match s.mechanism {
        Mechanism::Mcar => (mcar_mask(n, t, s.n_missing, &mut mask_rng), Vec::new()),
        Mechanism::McarWithinSeason => (within_season_mask(n, t, s.n_missing, &mut mask_rng), Vec::new()),
        Mechanism::Propensity => {
            let pm = propensity_mask(&y0, s.n_missing, &mut mask_rng)?;
            (pm.mask, pm.flagged_periods)
        }
    };
    let y_obs = DMatrix::from_fn(n, t, |i, p| if w[(i, p)] { s.effect_ratio * y0[(i, p)] } else { y0[(i, p)] });
    let dataset = PanelDataset::new(y_obs, w)?.with_control(ControlOutcome::new("z", z));
    Ok(SimData { dataset, y0_truth: y0, truth_delta: s.truth_delta(), flagged_periods })
}
