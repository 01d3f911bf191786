use std::path::{Path, PathBuf};

use super::svg::{box_chart, BoxStat};
use super::{push_row, quartile_cells, run_pool, stream, stream_seed, write_outputs, ExperimentConfig, Quartiles, Scene};
use crate::error::{Error, Result};
use crate::estimator::{estimate_field, EstimatorBudget, FieldEstimate};
use crate::matcher::Corner;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Four corner estimates of one site under one budget.
#[derive(Debug, Clone)]
pub struct CornerTrial {
    pub site: usize,
    pub budget: f64,
    pub rep: usize,
    /// Key of this trial's stream; corner `c` runs on `stream_seed(seed, [c])`.
    pub seed: u64,
    /// True corner fields in `LL, LR, UL, UR` order, nT.
    pub truth: [f64; 4],
    pub estimates: [Option<FieldEstimate>; 4],
}

impl CornerTrial {
    pub fn ok(&self) -> bool {
        self.estimates.iter().all(Option::is_some)
    }

    /// `(B_hat - B_true)^2` per corner, nT^2; NaN where the estimate failed.
    pub fn se_nt2(&self) -> [f64; 4] {
        std::array::from_fn(|c| self.estimates[c].map_or(f64::NAN, |e| (e.b_hat_nt() - self.truth[c]).powi(2)))
    }
}

/// Runs the estimator on each corner of `site` with its own seeded stream.
///
/// The streams depend only on `(seed, site, budget, rep, corner)`, so the
/// localization sweep reuses exactly the estimates reported here.
pub fn estimate_corners(config: &ExperimentConfig, scene: &Scene, site: usize, budget: f64, rep: usize) -> Result<CornerTrial> {
    let s = &scene.sites[site];
    let cv = scene
        .grid
        .corners(s.i, s.j)
        .ok_or_else(|| Error::NodataSite(s.id.clone()))?;
    let truth = cv.to_array();
    let seed = stream_seed(config.seed, &[stream::ESTIMATE, site as u64, budget.to_bits(), rep as u64]);
    let gamma = config.sensor.gamma;
    let estimates = std::array::from_fn(|c| {
        let omega = gamma * truth[c] * 1e-9;
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &[c as u64]));
        let mut b = EstimatorBudget::new(budget).ok()?;
        estimate_field(&config.sensor, &config.estimator, &mut b, omega, &mut rng).ok()
    });
    Ok(CornerTrial {
        site,
        budget,
        rep,
        seed,
        truth,
        estimates,
    })
}

pub(crate) fn check_range(config: &ExperimentConfig, scene: &Scene) -> Result<()> {
    let b_max = config.estimator.omega_max / config.sensor.gamma * 1e9;
    for s in &scene.sites {
        let cv = scene.grid.corners(s.i, s.j).ok_or_else(|| Error::NodataSite(s.id.clone()))?;
        if let Some(b) = cv.to_array().into_iter().find(|&b| !(b > 0.0 && b < b_max)) {
            return Err(Error::Config(format!(
                "site {} has a corner field of {b} nT outside the estimator range (0, {b_max}) nT; configure a main field",
                s.id
            )));
        }
    }
    Ok(())
}

/// Work list of `(site, budget, rep)` in output order.
pub(crate) fn trial_keys(config: &ExperimentConfig, scene: &Scene) -> Vec<(usize, f64, usize)> {
    let mut keys = Vec::new();
    for site in 0..scene.sites.len() {
        for &b in &config.budgets {
            for rep in 0..config.repetitions {
                keys.push((site, b, rep));
            }
        }
    }
    keys
}

pub(crate) fn run_corner_trials(config: &ExperimentConfig, scene: &Scene) -> Result<Vec<CornerTrial>> {
    check_range(config, scene)?;
    let keys = trial_keys(config, scene);
    run_pool(config.workers, &keys, |&(s, b, r)| estimate_corners(config, scene, s, b, r))?
        .into_iter()
        .collect()
}

/// One `(site, budget, repetition)` row.
#[derive(Debug, Clone)]
pub struct FieldTrial {
    pub site_id: String,
    pub cell: (usize, usize),
    pub trial: CornerTrial,
}

#[derive(Debug, Clone)]
pub struct FieldSweep {
    pub budgets: Vec<f64>,
    pub site_ids: Vec<String>,
    pub trials: Vec<FieldTrial>,
}

pub fn run_field_estimation_sweep(config: &ExperimentConfig) -> Result<FieldSweep> {
    let scene = Scene::build(config)?;
    let trials = run_corner_trials(config, &scene)?
        .into_iter()
        .map(|t| {
            let s = &scene.sites[t.site];
            FieldTrial {
                site_id: s.id.clone(),
                cell: (s.i, s.j),
                trial: t,
            }
        })
        .collect();
    Ok(FieldSweep {
        budgets: config.budgets.clone(),
        site_ids: scene.sites.iter().map(|s| s.id.clone()).collect(),
        trials,
    })
}

impl FieldSweep {
    /// Per-corner squared errors pooled over trials matching `site` (all if `None`).
    pub fn se_values(&self, site: Option<&str>, budget: f64) -> Vec<f64> {
        self.trials
            .iter()
            .filter(|t| t.trial.budget == budget && site.is_none_or(|s| s == t.site_id))
            .flat_map(|t| t.trial.se_nt2())
            .collect()
    }

    pub fn summary(&self, site: Option<&str>, budget: f64) -> Option<Quartiles> {
        Quartiles::of(self.se_values(site, budget))
    }

    pub fn trials_csv(&self) -> String {
        let mut out = String::from("site,cell_i,cell_j,budget_s,rep,seed,status");
        for c in Corner::ALL {
            let c = format!("{c:?}");
            out += &format!(",b_true_nt_{c},b_hat_nt_{c},sigma_b_nt_{c},se_b_nt2_{c},shots_{c}");
        }
        out += ",se_b_nt2_mean\n";
        for t in &self.trials {
            let tr = &t.trial;
            let status = if tr.ok() { "ok" } else { "failed" };
            let mut row = format!(
                "{},{},{},{},{},{},{status}",
                t.site_id, t.cell.0, t.cell.1, tr.budget, tr.rep, tr.seed
            );
            let se = tr.se_nt2();
            for ((est, truth), se) in tr.estimates.iter().zip(tr.truth).zip(se) {
                match est {
                    Some(e) => row += &format!(",{truth},{},{},{se},{}", e.b_hat_nt(), e.sigma_b_nt(), e.shots_used),
                    None => row += &format!(",{truth},NaN,NaN,NaN,0"),
                }
            }
            push_row(&mut out, format_args!("{row},{}", se.iter().sum::<f64>() / 4.0));
        }
        out
    }

    /// Quartiles of per-corner squared errors per `(site, budget)` and pooled `all` rows.
    pub fn summary_csv(&self) -> String {
        let mut out = format!("site,budget_s,failed_trials,{}\n", Quartiles::CSV_HEADER);
        let failed = |site: Option<&str>, b: f64| {
            self.trials
                .iter()
                .filter(|t| t.trial.budget == b && !t.trial.ok() && site.is_none_or(|s| s == t.site_id))
                .count()
        };
        for site in self.site_ids.iter().map(|s| Some(s.as_str())).chain([None]) {
            for &b in &self.budgets {
                push_row(
                    &mut out,
                    format_args!("{},{b},{},{}", site.unwrap_or("all"), failed(site, b), quartile_cells(self.summary(site, b))),
                );
            }
        }
        out
    }

    pub fn svg(&self) -> String {
        let labels: Vec<String> = self.budgets.iter().map(|b| format!("{b} s")).collect();
        let boxes: Vec<BoxStat<'_>> = self
            .budgets
            .iter()
            .zip(&labels)
            .filter_map(|(&b, label)| {
                self.summary(None, b).map(|q| BoxStat {
                    label,
                    min: q.min,
                    q1: q.q1,
                    median: q.median,
                    q3: q.q3,
                    max: q.max,
                })
            })
            .collect();
        box_chart("Squared field error per corner vs budget", "SE (nT^2)", &boxes)
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        write_outputs(
            dir,
            &[
                ("field_trials.csv", self.trials_csv()),
                ("field_summary.csv", self.summary_csv()),
                ("field_se.svg", self.svg()),
            ],
        )
    }
}
