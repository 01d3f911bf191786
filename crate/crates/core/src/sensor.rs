//! Single-spin NV-center Ramsey interferometry.
//!
//! A shot prepares the spin, lets it precess for `tau` seconds at the Larmor
//! angular frequency `omega = gamma * B`, applies a second pi/2 pulse with
//! phase `phase`, and reads out. The probability of reading `|0>` is
//!
//! ```text
//! p0 = alpha + beta * exp(-(tau / T2*)^2) * cos(omega * tau + phase)
//! ```
//!
//! with `alpha = (1 + F0 - F1) / 2` and `beta = (F0 + F1 - 1) / 2`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// NV electron gyromagnetic ratio, 2*pi x 28.024 GHz/T, in rad s^-1 T^-1.
pub const NV_GYROMAGNETIC_RATIO: f64 = 2.0 * PI * 28.024e9;

/// Readout and coherence parameters of one NV spin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NvSensorModel {
    /// Readout fidelity of `|0>`.
    pub f0: f64,
    /// Readout fidelity of `|1>`.
    pub f1: f64,
    /// Inhomogeneous dephasing time, seconds.
    pub t2_star: f64,
    /// Gyromagnetic ratio, rad s^-1 T^-1.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_gamma() -> f64 {
    NV_GYROMAGNETIC_RATIO
}

impl Default for NvSensorModel {
    /// Room-temperature single spin: F0 = 0.88, F1 = 0.98, T2* = 1.5 ms.
    fn default() -> Self {
        Self {
            f0: 0.88,
            f1: 0.98,
            t2_star: 1.5e-3,
            gamma: NV_GYROMAGNETIC_RATIO,
        }
    }
}

/// Offset and amplitude of the Ramsey fringe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contrast {
    pub alpha: f64,
    pub beta: f64,
}

impl NvSensorModel {
    pub fn new(f0: f64, f1: f64, t2_star: f64, gamma: f64) -> Result<Self> {
        let model = Self {
            f0,
            f1,
            t2_star,
            gamma,
        };
        model.validate()?;
        Ok(model)
    }

    /// Perfect readout with the given dephasing time.
    pub fn ideal(t2_star: f64) -> Self {
        Self {
            f0: 1.0,
            f1: 1.0,
            t2_star,
            gamma: NV_GYROMAGNETIC_RATIO,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("f0", self.f0), ("f1", self.f1)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidModel(format!("{name} = {f} outside [0, 1]")));
            }
        }
        if self.f0 + self.f1 <= 1.0 {
            return Err(Error::InvalidModel(format!(
                "f0 + f1 = {} leaves no fringe contrast",
                self.f0 + self.f1
            )));
        }
        if !(self.t2_star > 0.0 && self.t2_star.is_finite()) {
            return Err(Error::InvalidModel(format!("t2_star = {} must be positive", self.t2_star)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidModel(format!("gamma = {} must be positive", self.gamma)));
        }
        Ok(())
    }

    pub fn contrast(&self) -> Contrast {
        Contrast {
            alpha: (1.0 + self.f0 - self.f1) / 2.0,
            beta: (self.f0 + self.f1 - 1.0) / 2.0,
        }
    }

    /// Gaussian dephasing envelope `exp(-(tau/T2*)^2)`.
    pub fn envelope(&self, tau: f64) -> f64 {
        let x = tau / self.t2_star;
        (-x * x).exp()
    }
}

/// Free-evolution time and second-pulse phase of one Ramsey shot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RamseyControl {
    /// Sensing time, seconds.
    pub tau: f64,
    /// Phase of the second pi/2 pulse, radians, kept in `[0, 2*pi)`.
    pub phase: f64,
}

impl RamseyControl {
    pub fn new(tau: f64, phase: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidControl(format!("tau = {tau} must be positive")));
        }
        if !phase.is_finite() {
            return Err(Error::InvalidControl(format!("phase = {phase} is not finite")));
        }
        Ok(Self {
            tau,
            phase: phase.rem_euclid(2.0 * PI),
        })
    }
}

fn check(model: &NvSensorModel, control: &RamseyControl) -> Result<()> {
    model.validate()?;
    if !(control.tau > 0.0) {
        return Err(Error::InvalidControl(format!("tau = {} must be positive", control.tau)));
    }
    Ok(())
}

/// Probability of reading the spin in `|0>`.
pub fn outcome_probability(model: &NvSensorModel, control: &RamseyControl, omega: f64) -> Result<f64> {
    check(model, control)?;
    Ok(p0_unchecked(model, control, omega))
}

// Hot path for the estimators; callers validate once up front.
#[inline]
pub(crate) fn p0_unchecked(model: &NvSensorModel, control: &RamseyControl, omega: f64) -> f64 {
    let c = model.contrast();
    c.alpha + c.beta * model.envelope(control.tau) * (omega * control.tau + control.phase).cos()
}

/// Derivative of [`outcome_probability`] with respect to `omega`.
pub fn dp0_domega(model: &NvSensorModel, control: &RamseyControl, omega: f64) -> Result<f64> {
    check(model, control)?;
    let c = model.contrast();
    Ok(-control.tau * c.beta * model.envelope(control.tau) * (omega * control.tau + control.phase).sin())
}

/// Draws one single-shot outcome; `true` means the spin was read out in `|0>`.
pub fn sample_shot<R: Rng + ?Sized>(
    model: &NvSensorModel,
    control: &RamseyControl,
    omega: f64,
    rng: &mut R,
) -> Result<bool> {
    let p0 = outcome_probability(model, control, omega)?;
    Ok(rng.random::<f64>() < p0)
}

/// Anything that can execute a Ramsey shot and report its outcome.
///
/// The estimators only see this interface, so the same code drives a
/// simulated spin or recorded data.
pub trait ShotSource {
    fn model(&self) -> &NvSensorModel;
    fn shot(&mut self, control: &RamseyControl) -> Result<bool>;
}

/// A simulated spin precessing at a fixed, hidden Larmor frequency.
#[derive(Debug)]
pub struct SimulatedSpin<'r, R: Rng + ?Sized> {
    model: NvSensorModel,
    omega: f64,
    rng: &'r mut R,
}

impl<'r, R: Rng + ?Sized> SimulatedSpin<'r, R> {
    pub fn new(model: NvSensorModel, omega: f64, rng: &'r mut R) -> Result<Self> {
        model.validate()?;
        Ok(Self { model, omega, rng })
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }
}

impl<R: Rng + ?Sized> ShotSource for SimulatedSpin<'_, R> {
    fn model(&self) -> &NvSensorModel {
        &self.model
    }

    fn shot(&mut self, control: &RamseyControl) -> Result<bool> {
        if !(control.tau > 0.0) {
            return Err(Error::InvalidControl(format!("tau = {} must be positive", control.tau)));
        }
        let p0 = p0_unchecked(&self.model, control, self.omega);
        Ok(self.rng.random::<f64>() < p0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctl(tau: f64, phase: f64) -> RamseyControl {
        RamseyControl::new(tau, phase).unwrap()
    }

    #[test]
    fn perfect_fidelity_zero_phase_reads_zero() {
        let m = NvSensorModel::ideal(1.5e-3);
        let p = outcome_probability(&m, &ctl(1e-6, 0.0), 0.0).unwrap();
        let env = m.envelope(1e-6);
        assert!((1.0 - p).abs() <= 1.0 - env + 1e-15);
    }

    #[test]
    fn quadrature_point_gives_alpha() {
        let m = NvSensorModel::default();
        let tau = 1e-6;
        // omega * tau + phase = pi/2
        let p = outcome_probability(&m, &ctl(tau, PI / 2.0), 0.0).unwrap();
        assert!((p - 0.45).abs() < 1e-12, "{p}");
    }

    #[test]
    fn long_tau_dephases_to_alpha() {
        let m = NvSensorModel::default();
        let p = outcome_probability(&m, &ctl(50.0 * m.t2_star, 0.0), 1234.0).unwrap();
        assert!((p - m.contrast().alpha).abs() < 1e-15);
    }

    #[test]
    fn derivative_examples() {
        let m = NvSensorModel::ideal(1.5e-3);
        assert_eq!(dp0_domega(&m, &ctl(1e-6, 0.0), 0.0).unwrap(), 0.0);
        let tau = 1e-8;
        let d = dp0_domega(&m, &ctl(tau, PI / 2.0), 0.0).unwrap();
        assert!((d + tau / 2.0).abs() < 1e-9 * tau);
    }

    #[test]
    fn derivative_matches_finite_difference_grid() {
        // 100-point (omega, tau, phase) grid.
        let m = NvSensorModel::default();
        let mut checked = 0;
        for a in 0..5 {
            for b in 0..5 {
                for c in 0..4 {
                    let tau = 1e-6 * (1.0 + 3.0 * a as f64);
                    let omega = 1.0e5 + 7.3e5 * b as f64;
                    let phase = 0.3 + 1.4 * c as f64;
                    let control = ctl(tau, phase);
                    let h = 1e-3 / tau;
                    let f = |w: f64| outcome_probability(&m, &control, w).unwrap();
                    let fd = (-f(omega + 2.0 * h) + 8.0 * f(omega + h) - 8.0 * f(omega - h) + f(omega - 2.0 * h))
                        / (12.0 * h);
                    let an = dp0_domega(&m, &control, omega).unwrap();
                    assert!(((an - fd) / an).abs() < 1e-6, "tau={tau} omega={omega} phase={phase}");
                    checked += 1;
                }
            }
        }
        assert_eq!(checked, 100);
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(matches!(NvSensorModel::new(0.5, 0.5, 1e-3, 1.0), Err(Error::InvalidModel(_))));
        assert!(matches!(NvSensorModel::new(0.4, 0.5, 1e-3, 1.0), Err(Error::InvalidModel(_))));
        assert!(matches!(NvSensorModel::new(1.1, 0.5, 1e-3, 1.0), Err(Error::InvalidModel(_))));
        assert!(matches!(NvSensorModel::new(0.9, 0.9, 0.0, 1.0), Err(Error::InvalidModel(_))));
        assert!(matches!(RamseyControl::new(0.0, 0.0), Err(Error::InvalidControl(_))));
        assert!(matches!(RamseyControl::new(1e-6, f64::NAN), Err(Error::InvalidControl(_))));
        let bad = RamseyControl { tau: -1.0, phase: 0.0 };
        assert!(outcome_probability(&NvSensorModel::default(), &bad, 0.0).is_err());
    }

    #[test]
    fn phase_is_reduced() {
        let c = RamseyControl::new(1e-6, 2.0 * PI + 0.25).unwrap();
        assert!((c.phase - 0.25).abs() < 1e-12);
    }

    #[test]
    fn certain_outcome_always_one() {
        let m = NvSensorModel::ideal(1.5e-3);
        // envelope is 1 to within 1e-20 at tau = 1 ps, so p0 rounds to 1
        let control = ctl(1e-12, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..1000).all(|_| sample_shot(&m, &control, 0.0, &mut rng).unwrap()));
    }

    #[test]
    fn binomial_concentration() {
        let m = NvSensorModel::default();
        let control = ctl(1e-6, PI / 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let hits = (0..n).filter(|_| sample_shot(&m, &control, 0.0, &mut rng).unwrap()).count();
        let mean = hits as f64 / n as f64;
        let tol = 3.0 * (0.45f64 * 0.55 / n as f64).sqrt();
        assert!((mean - 0.45).abs() < tol, "{mean}");
    }

    #[test]
    fn seeded_shots_reproduce() {
        let m = NvSensorModel::default();
        let control = ctl(3e-4, 0.7);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..256)
                .map(|_| sample_shot(&m, &control, 4.2e6, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(99), run(99));
    }
}
