//! Budget-constrained two-stage Bayesian estimation of a static field.
//!
//! Stage 1 runs a fixed number of shots at `tau_min = pi / omega_max` with zero
//! phase. On `(0, omega_max]` that keeps `omega * tau` inside `(0, pi]`, so the
//! fringe is monotone and the grid posterior is unimodal. Its mean defines a
//! refinement interval of width `refinement_width`.
//!
//! Stage 2 tracks the posterior inside that interval with a particle filter
//! and chooses each shot with a deterministic rule:
//!
//! * `tau = min(T2*/2, kappa / sd, pi / span)`, where `sd` is the posterior
//!   standard deviation and `span` the extent of the particle cloud, so the
//!   phase spread across the cloud never exceeds half a fringe;
//! * the phase puts the posterior mean on the steepest point of the fringe,
//!   `mean * tau + phase = pi/2`.
//!
//! Shots are taken until the next one would overrun the budget. Only free
//! evolution time counts against the budget.

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensor::{p0_unchecked, NvSensorModel, RamseyControl, ShotSource, SimulatedSpin};

/// Discrete belief over the Larmor angular frequency.
///
/// Used both as a fixed grid (stage 1) and as a weighted particle cloud
/// (stage 2); the update rule is the same.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyPosterior {
    support: Vec<f64>,
    weights: Vec<f64>,
}

impl FrequencyPosterior {
    /// Uniform belief on `bins` bin centres of `(0, omega_max]`.
    pub fn grid(omega_max: f64, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::EmptyGrid("stage-1 grid needs at least one bin".into()));
        }
        if !(omega_max > 0.0) {
            return Err(Error::InvalidConfig(format!("omega_max = {omega_max} must be positive")));
        }
        let width = omega_max / bins as f64;
        let support = (0..bins).map(|k| (k as f64 + 0.5) * width).collect();
        Ok(Self {
            support,
            weights: vec![1.0 / bins as f64; bins],
        })
    }

    /// `n` stratified uniform particles on `[lo, hi]`.
    pub fn uniform_particles<R: Rng + ?Sized>(lo: f64, hi: f64, n: usize, rng: &mut R) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::EmptyInterval { lo, hi });
        }
        if n == 0 {
            return Err(Error::EmptyGrid("particle cloud needs at least one particle".into()));
        }
        let step = (hi - lo) / n as f64;
        let support = (0..n)
            .map(|k| (lo + (k as f64 + rng.random::<f64>()) * step).min(hi))
            .collect();
        Ok(Self {
            support,
            weights: vec![1.0 / n as f64; n],
        })
    }

    /// Builds a posterior from arbitrary (unnormalized) weights.
    pub fn from_weighted(support: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if support.len() != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} support points vs {} weights",
                support.len(),
                weights.len()
            )));
        }
        if support.is_empty() {
            return Err(Error::EmptyGrid("empty posterior".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParams("weights must be finite and nonnegative".into()));
        }
        let mut post = Self { support, weights };
        post.normalize()?;
        Ok(post)
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    fn normalize(&mut self) -> Result<()> {
        let total: f64 = self.weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::DegeneratePosterior);
        }
        let inv = 1.0 / total;
        self.weights.iter_mut().for_each(|w| *w *= inv);
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().zip(&self.weights).map(|(x, w)| x * w).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.support
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * (x - m) * (x - m))
            .sum()
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Extent of the support, `max - min`.
    pub fn span(&self) -> f64 {
        let (lo, hi) = self
            .support
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        hi - lo
    }

    /// Effective sample size `1 / sum(w^2)`.
    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Multiplies each weight by the likelihood of `outcome` and renormalizes.
    pub fn bayes_update(&mut self, model: &NvSensorModel, control: &RamseyControl, outcome: bool) -> Result<()> {
        model.validate()?;
        if !(control.tau > 0.0) {
            return Err(Error::InvalidControl(format!("tau = {} must be positive", control.tau)));
        }
        self.update_unchecked(model, control, outcome)
    }

    fn update_unchecked(&mut self, model: &NvSensorModel, control: &RamseyControl, outcome: bool) -> Result<()> {
        for (w, &omega) in self.weights.iter_mut().zip(&self.support) {
            let p0 = p0_unchecked(model, control, omega);
            *w *= if outcome { p0 } else { 1.0 - p0 };
        }
        self.normalize()
    }

    /// Applies `zeros` outcomes of `|0>` and `ones` of `|1>` taken with the same control.
    ///
    /// Equivalent to that many [`bayes_update`](Self::bayes_update) calls, but
    /// evaluated in the log domain so long runs cannot underflow.
    pub fn update_batch(&mut self, model: &NvSensorModel, control: &RamseyControl, zeros: usize, ones: usize) -> Result<()> {
        model.validate()?;
        let (k0, k1) = (zeros as f64, ones as f64);
        let mut logw: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.support)
            .map(|(&w, &omega)| {
                let p0 = p0_unchecked(model, control, omega);
                let mut l = w.ln();
                if zeros > 0 {
                    l += k0 * p0.ln();
                }
                if ones > 0 {
                    l += k1 * (1.0 - p0).ln();
                }
                l
            })
            .collect();
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::DegeneratePosterior);
        }
        logw.iter_mut().for_each(|l| *l = (*l - max).exp());
        self.weights = logw;
        self.normalize()
    }

    /// Systematic resampling followed by a Liu-West shrinkage kernel with
    /// bandwidth `h`, which keeps the cloud mean and variance while restoring
    /// particle diversity. Particles stay inside `(0, omega_max]`.
    pub fn resample<R: Rng + ?Sized>(&mut self, h: f64, omega_max: f64, rng: &mut R) {
        let n = self.len();
        let mean = self.mean();
        let sd = self.std();
        let a = (1.0 - h * h).sqrt();
        let u0 = rng.random::<f64>() / n as f64;
        let mut out = Vec::with_capacity(n);
        let mut cumulative = self.weights[0];
        let mut idx = 0;
        for k in 0..n {
            let u = u0 + k as f64 / n as f64;
            while u > cumulative && idx + 1 < n {
                idx += 1;
                cumulative += self.weights[idx];
            }
            let xi: f64 = StandardNormal.sample(rng);
            let x = a * self.support[idx] + (1.0 - a) * mean + h * sd * xi;
            out.push(x.clamp(f64::MIN_POSITIVE, omega_max));
        }
        self.support = out;
        self.weights = vec![1.0 / n as f64; n];
    }
}

/// Total sensing-time budget and the part already spent, seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorBudget {
    pub r_max: f64,
    pub spent: f64,
}

impl EstimatorBudget {
    pub fn new(r_max: f64) -> Result<Self> {
        if !(r_max >= 0.0 && r_max.is_finite()) {
            return Err(Error::InvalidBudget(format!("r_max = {r_max}")));
        }
        Ok(Self { r_max, spent: 0.0 })
    }

    pub fn remaining(&self) -> f64 {
        self.r_max - self.spent
    }

    pub fn can_spend(&self, tau: f64) -> bool {
        self.spent + tau <= self.r_max
    }

    fn spend(&mut self, tau: f64) {
        debug_assert!(self.can_spend(tau));
        self.spent += tau;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    /// Upper end of the frequency range, rad/s.
    pub omega_max: f64,
    pub stage1_shots: usize,
    pub stage1_bins: usize,
    /// Width of the stage-2 interval around the stage-1 mean, rad/s.
    pub refinement_width: f64,
    pub particle_count: usize,
    /// Resample when ESS drops below this fraction of `particle_count`.
    pub resample_threshold: f64,
    /// Phase-spread constant in `tau <= kappa / sd`.
    pub kappa: f64,
    /// Liu-West kernel bandwidth used after resampling.
    pub jitter: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self::for_range(2.0 * PI * 2.0e6)
    }
}

impl EstimatorConfig {
    /// Defaults scaled to a given dynamic range.
    pub fn for_range(omega_max: f64) -> Self {
        Self {
            omega_max,
            stage1_shots: 4000,
            stage1_bins: 512,
            refinement_width: omega_max / 16.0,
            particle_count: 1000,
            resample_threshold: 0.5,
            kappa: 1.0,
            jitter: 0.1,
        }
    }

    pub fn tau_min(&self) -> f64 {
        PI / self.omega_max
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.omega_max > 0.0 && self.omega_max.is_finite()) {
            return bad(format!("omega_max = {}", self.omega_max));
        }
        if self.stage1_shots == 0 {
            return bad("stage1_shots must be at least 1".into());
        }
        if self.stage1_bins == 0 {
            return bad("stage1_bins must be at least 1".into());
        }
        if !(self.refinement_width > 0.0) {
            return bad(format!("refinement_width = {}", self.refinement_width));
        }
        if self.particle_count < 100 {
            return bad(format!("particle_count = {} (need >= 100)", self.particle_count));
        }
        if !(0.0..=1.0).contains(&self.resample_threshold) {
            return bad(format!("resample_threshold = {}", self.resample_threshold));
        }
        if !(self.kappa > 0.0) {
            return bad(format!("kappa = {}", self.kappa));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return bad(format!("jitter = {}", self.jitter));
        }
        Ok(())
    }
}

/// Outcome of the non-adaptive stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseEstimate {
    pub omega_hat: f64,
    pub sigma_omega: f64,
    pub interval: (f64, f64),
    pub shots: usize,
    pub budget_spent: f64,
}

/// Field estimate with its posterior spread.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldEstimate {
    /// Tesla.
    pub b_hat: f64,
    /// Posterior standard deviation, tesla.
    pub sigma_b: f64,
    pub omega_hat: f64,
    pub sigma_omega: f64,
    pub shots_used: usize,
    pub budget_spent: f64,
    /// Set when no adaptive shot fit in the budget and this is the stage-1 result.
    pub stage2_skipped: bool,
}

impl FieldEstimate {
    fn from_omega(omega: f64, sigma_omega: f64, gamma: f64) -> (f64, f64, f64) {
        let b_hat = omega / gamma;
        // recompute so b_hat * gamma == omega_hat holds bit-for-bit
        (b_hat, sigma_omega / gamma, b_hat * gamma)
    }

    pub fn b_hat_nt(&self) -> f64 {
        self.b_hat * 1e9
    }

    pub fn sigma_b_nt(&self) -> f64 {
        self.sigma_b * 1e9
    }
}

/// Non-adaptive stage on a grid posterior.
pub fn stage1_coarse<S: ShotSource + ?Sized>(
    source: &mut S,
    config: &EstimatorConfig,
    budget: &mut EstimatorBudget,
) -> Result<CoarseEstimate> {
    config.validate()?;
    let model = *source.model();
    model.validate()?;
    let tau = config.tau_min();
    let cost = config.stage1_shots as f64 * tau;
    if !budget.can_spend(cost) {
        return Err(Error::BudgetExhausted(format!(
            "stage 1 needs {cost:e} s, {:e} s remain",
            budget.remaining()
        )));
    }
    let control = RamseyControl::new(tau, 0.0)?;
    let mut post = FrequencyPosterior::grid(config.omega_max, config.stage1_bins)?;
    let mut zeros = 0usize;
    for _ in 0..config.stage1_shots {
        zeros += usize::from(source.shot(&control)?);
    }
    budget.spend(cost);
    // Every shot shares one control, so the product of per-shot likelihoods
    // collapses to p0^k (1 - p0)^(n - k).
    post.update_batch(&model, &control, zeros, config.stage1_shots - zeros)?;
    let omega_hat = post.mean();
    let half = config.refinement_width / 2.0;
    let lo = (omega_hat - half).max(0.0);
    let hi = (omega_hat + half).min(config.omega_max);
    Ok(CoarseEstimate {
        omega_hat,
        sigma_omega: post.std(),
        interval: (lo, hi),
        shots: config.stage1_shots,
        budget_spent: cost,
    })
}

/// Adaptive stage: particle filter plus the fixed control rule described in
/// the module docs, run until the budget cannot cover the next shot.
pub fn stage2_adaptive<S: ShotSource + ?Sized, R: Rng + ?Sized>(
    interval: (f64, f64),
    source: &mut S,
    budget: &mut EstimatorBudget,
    config: &EstimatorConfig,
    rng: &mut R,
) -> Result<FieldEstimate> {
    config.validate()?;
    let model = *source.model();
    model.validate()?;
    let (lo, hi) = interval;
    if !(hi > lo) || lo < 0.0 || hi > config.omega_max {
        return Err(Error::EmptyInterval { lo, hi });
    }
    let mut post = FrequencyPosterior::uniform_particles(lo, hi, config.particle_count, rng)?;
    let tau_cap = model.t2_star / 2.0;
    let resample_below = config.resample_threshold * config.particle_count as f64;
    let start = budget.spent;
    let mut shots = 0usize;
    loop {
        let mean = post.mean();
        let sd = post.std();
        let span = post.span();
        let mut tau = tau_cap;
        if sd > 0.0 {
            tau = tau.min(config.kappa / sd);
        }
        if span > 0.0 {
            tau = tau.min(PI / span);
        }
        if !budget.can_spend(tau) {
            break;
        }
        let control = RamseyControl::new(tau, PI / 2.0 - mean * tau)?;
        let outcome = source.shot(&control)?;
        budget.spend(tau);
        shots += 1;
        post.update_unchecked(&model, &control, outcome)?;
        if post.ess() < resample_below {
            post.resample(config.jitter, config.omega_max, rng);
        }
    }
    if shots == 0 {
        return Err(Error::BudgetExhausted(format!(
            "{:e} s left is shorter than the first adaptive shot",
            budget.remaining()
        )));
    }
    let (b_hat, sigma_b, omega_hat) = FieldEstimate::from_omega(post.mean(), post.std(), model.gamma);
    Ok(FieldEstimate {
        b_hat,
        sigma_b,
        omega_hat,
        sigma_omega: post.std(),
        shots_used: shots,
        budget_spent: budget.spent - start,
        stage2_skipped: false,
    })
}

/// Both stages against any shot source. `rng` only drives the particle filter.
pub fn estimate_with_source<S: ShotSource + ?Sized, R: Rng + ?Sized>(
    source: &mut S,
    config: &EstimatorConfig,
    budget: &mut EstimatorBudget,
    rng: &mut R,
) -> Result<FieldEstimate> {
    let gamma = source.model().gamma;
    let coarse = stage1_coarse(source, config, budget)?;
    match stage2_adaptive(coarse.interval, source, budget, config, rng) {
        Ok(mut est) => {
            est.shots_used += coarse.shots;
            est.budget_spent += coarse.budget_spent;
            Ok(est)
        }
        Err(Error::BudgetExhausted(_)) => {
            let (b_hat, sigma_b, omega_hat) = FieldEstimate::from_omega(coarse.omega_hat, coarse.sigma_omega, gamma);
            Ok(FieldEstimate {
                b_hat,
                sigma_b,
                omega_hat,
                sigma_omega: coarse.sigma_omega,
                shots_used: coarse.shots,
                budget_spent: coarse.budget_spent,
                stage2_skipped: true,
            })
        }
        Err(e) => Err(e),
    }
}

/// Simulates a spin at `true_omega` and estimates it under `budget`.
///
/// Two child streams are drawn from `rng`: the first drives the shot
/// outcomes, the second the particle filter.
pub fn estimate_field<R: RngCore + ?Sized>(
    model: &NvSensorModel,
    config: &EstimatorConfig,
    budget: &mut EstimatorBudget,
    true_omega: f64,
    rng: &mut R,
) -> Result<FieldEstimate> {
    if !(true_omega > 0.0 && true_omega < config.omega_max) {
        return Err(Error::InvalidParams(format!(
            "true omega {true_omega} outside (0, {})",
            config.omega_max
        )));
    }
    let mut spin_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
    let mut filter_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
    let mut spin = SimulatedSpin::new(*model, true_omega, &mut spin_rng)?;
    estimate_with_source(&mut spin, config, budget, &mut filter_rng)
}
