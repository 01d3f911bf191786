use std::path::{Path, PathBuf};

use super::sweep::{check_range, trial_keys};
use super::{estimate_corners, push_row, quartile_cells, run_pool, write_outputs, ExperimentConfig, Quartiles, Scene};
use crate::error::Result;
use crate::estimator::FieldEstimate;
use crate::matcher::{localization_error, two_metric_search, Corner, MeasurementSet, Pipeline, Roi, SearchParams};

/// One search over one sensor subset with one pipeline.
#[derive(Debug, Clone)]
pub struct LocalizationTrial {
    pub site_id: String,
    pub truth: (usize, usize),
    pub budget: f64,
    pub rep: usize,
    pub seed: u64,
    pub sensors: usize,
    pub pipeline: Pipeline,
    pub outcome: Option<Found>,
}

#[derive(Debug, Clone, Copy)]
pub struct Found {
    pub cell: (usize, usize),
    /// Planar distance between true and estimated cell centres, metres.
    pub error_m: f64,
    pub d2_min: f64,
    pub coarse_evals: usize,
    pub refine_evals: usize,
    /// Wall-clock seconds of the search call.
    pub runtime: f64,
}

#[derive(Debug, Clone)]
pub struct LocalizationReport {
    pub budgets: Vec<f64>,
    pub sensor_counts: Vec<usize>,
    pub pipelines: Vec<Pipeline>,
    pub site_ids: Vec<String>,
    pub trials: Vec<LocalizationTrial>,
}

fn search(scene: &Scene, params: &SearchParams, frac: f64, site: usize, est: &[FieldEstimate]) -> Result<Found> {
    let s = &scene.sites[site];
    let m = MeasurementSet::from_estimates(Corner::first(est.len()).to_vec(), est)?;
    let roi = Roi::around(&scene.grid, s.i, s.j, frac)?;
    let start = std::time::Instant::now();
    let r = two_metric_search(&scene.grid, &m, &roi, params)?;
    let runtime = start.elapsed().as_secs_f64();
    Ok(Found {
        cell: r.cell,
        error_m: localization_error(&scene.grid, (s.i, s.j), r.cell),
        d2_min: r.d2_min,
        coarse_evals: r.coarse_evals,
        refine_evals: r.refine_evals,
        runtime,
    })
}

/// Estimates corners, then localizes with every configured sensor count and
/// pipeline. Sensor subsets are nested prefixes of `LL, LR, UL, UR` over the
/// same four estimates; pipelines that need gradients are skipped below four
/// sensors.
pub fn run_localization_sweep(config: &ExperimentConfig) -> Result<LocalizationReport> {
    let scene = Scene::build(config)?;
    check_range(config, &scene)?;
    let keys = trial_keys(config, &scene);
    let rows = run_pool(config.workers, &keys, |&(site, budget, rep)| -> Result<Vec<LocalizationTrial>> {
        let t = estimate_corners(config, &scene, site, budget, rep)?;
        let s = &scene.sites[site];
        let mut out = Vec::new();
        for &n in &config.sensor_counts {
            for &pipeline in &config.pipelines {
                if pipeline.uses_gradient() && n < 4 {
                    continue;
                }
                let est: Option<Vec<FieldEstimate>> = t.estimates[..n].iter().copied().collect();
                let params = SearchParams {
                    pipeline,
                    ..config.search.clone()
                };
                let outcome = est.and_then(|e| search(&scene, &params, config.localization_roi_frac, site, &e).ok());
                out.push(LocalizationTrial {
                    site_id: s.id.clone(),
                    truth: (s.i, s.j),
                    budget,
                    rep,
                    seed: t.seed,
                    sensors: n,
                    pipeline,
                    outcome,
                });
            }
        }
        Ok(out)
    })?;
    let mut trials = Vec::new();
    for r in rows {
        trials.extend(r?);
    }
    Ok(LocalizationReport {
        budgets: config.budgets.clone(),
        sensor_counts: config.sensor_counts.clone(),
        pipelines: config.pipelines.clone(),
        site_ids: scene.sites.iter().map(|s| s.id.clone()).collect(),
        trials,
    })
}

impl LocalizationReport {
    pub fn errors(&self, site: Option<&str>, budget: f64, sensors: usize, pipeline: Pipeline) -> Vec<f64> {
        self.trials
            .iter()
            .filter(|t| {
                t.budget == budget && t.sensors == sensors && t.pipeline == pipeline && site.is_none_or(|s| s == t.site_id)
            })
            .map(|t| t.outcome.map_or(f64::NAN, |f| f.error_m))
            .collect()
    }

    pub fn summary(&self, site: Option<&str>, budget: f64, sensors: usize, pipeline: Pipeline) -> Option<Quartiles> {
        Quartiles::of(self.errors(site, budget, sensors, pipeline))
    }

    pub fn trials_csv(&self) -> String {
        let mut out = String::from(
            "site,true_i,true_j,budget_s,rep,seed,sensors,pipeline,status,est_i,est_j,error_m,d2_min,coarse_evals,refine_evals\n",
        );
        for t in &self.trials {
            let head = format!(
                "{},{},{},{},{},{},{},{}",
                t.site_id, t.truth.0, t.truth.1, t.budget, t.rep, t.seed, t.sensors, t.pipeline
            );
            match t.outcome {
                Some(f) => push_row(
                    &mut out,
                    format_args!(
                        "{head},ok,{},{},{},{},{},{}",
                        f.cell.0, f.cell.1, f.error_m, f.d2_min, f.coarse_evals, f.refine_evals
                    ),
                ),
                None => push_row(&mut out, format_args!("{head},failed,,,NaN,NaN,0,0")),
            }
        }
        out
    }

    /// Wall-clock of each search, kept apart so the other files stay reproducible.
    pub fn timing_csv(&self) -> String {
        let mut out = String::from("site,budget_s,rep,sensors,pipeline,runtime_s\n");
        for t in &self.trials {
            let rt = t.outcome.map_or(f64::NAN, |f| f.runtime);
            push_row(
                &mut out,
                format_args!("{},{},{},{},{},{rt}", t.site_id, t.budget, t.rep, t.sensors, t.pipeline),
            );
        }
        out
    }

    /// Quartiles of localization error in metres per `(site, budget, sensors, pipeline)`.
    pub fn summary_csv(&self) -> String {
        let mut out = format!("site,budget_s,sensors,pipeline,{}\n", Quartiles::CSV_HEADER);
        for site in self.site_ids.iter().map(|s| Some(s.as_str())).chain([None]) {
            for &b in &self.budgets {
                for &n in &self.sensor_counts {
                    for &p in &self.pipelines {
                        if p.uses_gradient() && n < 4 {
                            continue;
                        }
                        push_row(
                            &mut out,
                            format_args!("{},{b},{n},{p},{}", site.unwrap_or("all"), quartile_cells(self.summary(site, b, n, p))),
                        );
                    }
                }
            }
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        write_outputs(
            dir,
            &[
                ("localization_trials.csv", self.trials_csv()),
                ("localization_summary.csv", self.summary_csv()),
                ("localization_timing.csv", self.timing_csv()),
            ],
        )
    }
}
