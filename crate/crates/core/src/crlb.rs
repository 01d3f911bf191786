//! Fisher information and Cramér-Rao bounds for NV and classical magnetometers.
//!
//! All quantum bounds are per Ramsey shot unless a total budget is given, in
//! which case the shot count is `floor(t_total / tau)`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensor::{dp0_domega, outcome_probability, NvSensorModel, RamseyControl};

/// Scalar magnetometer with additive Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalSensorModel {
    pub label: String,
    /// Noise standard deviation per measurement, tesla.
    pub sigma: f64,
}

/// Budgeted quantum bound at one sensing time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetedCrlbPoint {
    pub tau: f64,
    pub shots: u64,
    /// Lower bound on the field-estimate variance, T^2.
    pub variance_b: f64,
}

fn check_tau(model: &NvSensorModel, tau: f64) -> Result<()> {
    model.validate()?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidControl(format!("tau = {tau} must be positive")));
    }
    Ok(())
}

/// Fisher information about `omega` carried by one shot at arbitrary phase,
/// `(dp0/domega)^2 / (p0 (1 - p0))`.
pub fn fisher_information(model: &NvSensorModel, control: &RamseyControl, omega: f64) -> Result<f64> {
    let p0 = outcome_probability(model, control, omega)?;
    let d = dp0_domega(model, control, omega)?;
    Ok(d * d / (p0 * (1.0 - p0)))
}

/// Fisher information at the optimal readout phase, s^2.
pub fn fisher_max(model: &NvSensorModel, tau: f64) -> Result<f64> {
    check_tau(model, tau)?;
    let sum = model.f0 + model.f1 - 1.0;
    let diff = model.f0 - model.f1;
    let x = tau / model.t2_star;
    Ok(tau * tau * sum * sum / (1.0 - diff * diff) * (-2.0 * x * x).exp())
}

/// Per-shot variance bound on `omega`, (rad/s)^2.
pub fn quantum_crlb_omega(model: &NvSensorModel, tau: f64) -> Result<f64> {
    check_tau(model, tau)?;
    let sum = model.f0 + model.f1 - 1.0;
    let diff = model.f0 - model.f1;
    let x = tau / model.t2_star;
    Ok((1.0 - diff * diff) / (tau * tau * sum * sum) * (2.0 * x * x).exp())
}

/// Field-variance bound after spending `t_total` seconds in shots of length `tau`.
pub fn quantum_crlb_field(model: &NvSensorModel, tau: f64, t_total: f64) -> Result<BudgetedCrlbPoint> {
    check_tau(model, tau)?;
    if !(t_total.is_finite() && tau <= t_total) {
        return Err(Error::InvalidBudget(format!("tau = {tau} exceeds t_total = {t_total}")));
    }
    let shots = (t_total / tau).floor() as u64;
    let var_omega = quantum_crlb_omega(model, tau)?;
    Ok(BudgetedCrlbPoint {
        tau,
        shots,
        variance_b: var_omega / (model.gamma * model.gamma * shots as f64),
    })
}

pub fn classical_fisher(model: &ClassicalSensorModel) -> Result<f64> {
    Ok(1.0 / classical_crlb(model)?)
}

/// Variance bound of an unbiased estimate from one Gaussian measurement: `sigma^2`.
pub fn classical_crlb(model: &ClassicalSensorModel) -> Result<f64> {
    if !(model.sigma > 0.0 && model.sigma.is_finite()) {
        return Err(Error::InvalidSigma(model.sigma));
    }
    Ok(model.sigma * model.sigma)
}

/// Maximal runs of the grid on which the budgeted quantum bound beats `sigma_classical^2`.
pub fn advantage_window(
    model: &NvSensorModel,
    sigma_classical: f64,
    t_total: f64,
    tau_grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if tau_grid.is_empty() {
        return Err(Error::EmptyGrid("tau grid".into()));
    }
    if tau_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParams("tau grid must be sorted ascending".into()));
    }
    let threshold = sigma_classical * sigma_classical;
    let mut windows = Vec::new();
    let mut open: Option<(f64, f64)> = None;
    for &tau in tau_grid {
        let var = quantum_crlb_field(model, tau, t_total)?.variance_b;
        if var < threshold {
            open = Some(match open {
                Some((lo, _)) => (lo, tau),
                None => (tau, tau),
            });
        } else if let Some(w) = open.take() {
            windows.push(w);
        }
    }
    windows.extend(open);
    Ok(windows)
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::EmptyGrid("log grid with zero points".into()));
    }
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::InvalidParams(format!("log grid needs 0 < lo <= hi, got [{lo}, {hi}]")));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|k| {
            if k == 0 {
                lo
            } else if k == n - 1 {
                hi
            } else {
                (a + (b - a) * k as f64 / (n - 1) as f64).exp()
            }
        })
        .collect())
}

/// Budgeted quantum curve over a grid together with classical reference levels.
#[derive(Debug, Clone)]
pub struct CrlbCurve {
    pub t_total: f64,
    pub points: Vec<BudgetedCrlbPoint>,
    pub classical: Vec<(ClassicalSensorModel, f64)>,
    /// Advantage windows, one list per classical sensor.
    pub windows: Vec<Vec<(f64, f64)>>,
}

impl CrlbCurve {
    pub fn compute(
        model: &NvSensorModel,
        t_total: f64,
        tau_grid: &[f64],
        classical: &[ClassicalSensorModel],
    ) -> Result<Self> {
        let points = tau_grid
            .iter()
            .map(|&tau| quantum_crlb_field(model, tau, t_total))
            .collect::<Result<Vec<_>>>()?;
        let mut levels = Vec::with_capacity(classical.len());
        let mut windows = Vec::with_capacity(classical.len());
        for c in classical {
            levels.push((c.clone(), classical_crlb(c)?));
            windows.push(advantage_window(model, c.sigma, t_total, tau_grid)?);
        }
        Ok(Self {
            t_total,
            points,
            classical: levels,
            windows,
        })
    }

    /// Grid point with the smallest bound (first one on ties).
    pub fn argmin(&self) -> Option<&BudgetedCrlbPoint> {
        self.points
            .iter()
            .reduce(|best, p| if p.variance_b < best.variance_b { p } else { best })
    }

    /// CSV with columns `tau_s,shots,var_q_T2` then one `var_c_T2_<label>` per classical sensor.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tau_s,shots,var_q_T2");
        for (c, _) in &self.classical {
            write!(out, ",var_c_T2_{}", c.label).unwrap();
        }
        out.push('\n');
        for p in &self.points {
            write!(out, "{:e},{},{:e}", p.tau, p.shots, p.variance_b).unwrap();
            for (_, v) in &self.classical {
                write!(out, ",{v:e}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}
