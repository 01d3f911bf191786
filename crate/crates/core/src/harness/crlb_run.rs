use std::path::{Path, PathBuf};

use super::svg::{color, loglog_chart, Band, Series};
use super::{push_row, write_outputs, ExperimentConfig};
use crate::crlb::{log_grid, BudgetedCrlbPoint, CrlbCurve};
use crate::error::{Error, Result};

/// Budgeted quantum bound over the configured dwell-time grid.
#[derive(Debug, Clone)]
pub struct CrlbReport {
    pub curve: CrlbCurve,
    pub minimum: BudgetedCrlbPoint,
}

pub fn run_crlb_curves(config: &ExperimentConfig) -> Result<CrlbReport> {
    let s = &config.crlb;
    if !(s.tau_min > 0.0 && s.tau_max > s.tau_min && s.points >= 2 && s.t_total > 0.0) {
        return Err(Error::Config(
            "crlb needs 0 < tau_min < tau_max, at least 2 points and a positive t_total".into(),
        ));
    }
    config.sensor.validate()?;
    let grid = log_grid(s.tau_min, s.tau_max, s.points)?;
    let curve = CrlbCurve::compute(&config.sensor, s.t_total, &grid, &s.classical)?;
    let minimum = *curve.argmin().ok_or_else(|| Error::EmptyGrid("tau grid".into()))?;
    Ok(CrlbReport { curve, minimum })
}

impl CrlbReport {
    pub fn curve_csv(&self) -> String {
        self.curve.to_csv()
    }

    /// One row per advantage window: `sensor,tau_lo_s,tau_hi_s`.
    pub fn windows_csv(&self) -> String {
        let mut out = String::from("sensor,tau_lo_s,tau_hi_s\n");
        for ((c, _), ws) in self.curve.classical.iter().zip(&self.curve.windows) {
            for (lo, hi) in ws {
                push_row(&mut out, format_args!("{},{lo:e},{hi:e}", c.label));
            }
        }
        out
    }

    pub fn svg(&self) -> String {
        let q: Vec<(f64, f64)> = self.curve.points.iter().map(|p| (p.tau, p.variance_b)).collect();
        let (lo, hi) = (q[0].0, q[q.len() - 1].0);
        let mut series = vec![Series {
            label: "NV quantum bound",
            points: q,
            dashed: false,
            color: color(0),
        }];
        let mut bands = Vec::new();
        for (k, ((c, var), ws)) in self.curve.classical.iter().zip(&self.curve.windows).enumerate() {
            series.push(Series {
                label: &c.label,
                points: vec![(lo, *var), (hi, *var)],
                dashed: true,
                color: color(k + 1),
            });
            bands.extend(ws.iter().map(|&(a, b)| Band {
                lo: a,
                hi: b,
                color: color(k + 1),
            }));
        }
        loglog_chart(
            &format!("Budgeted bound, T_total = {} s", self.curve.t_total),
            "dwell time tau (s)",
            "Var(B) (T^2)",
            &series,
            &bands,
        )
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        write_outputs(
            dir,
            &[
                ("crlb_curve.csv", self.curve_csv()),
                ("crlb_windows.csv", self.windows_csv()),
                ("crlb_curve.svg", self.svg()),
            ],
        )
    }
}
