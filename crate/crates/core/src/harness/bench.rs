use std::path::{Path, PathBuf};
use std::time::Instant;

use rand_distr::{Distribution, Normal};

use super::{loglog_slope, push_row, stream, stream_rng, write_outputs, ExperimentConfig, Quartiles, Scene};
use crate::error::{Error, Result};
use crate::matcher::{two_metric_search, Corner, MeasurementSet, Pipeline, Roi, SearchParams};

#[derive(Debug, Clone)]
pub struct BenchPoint {
    pub site_id: String,
    pub roi_frac: f64,
    pub roi: Roi,
    pub pipeline: Pipeline,
    pub cell: (usize, usize),
    pub d2_min: f64,
    pub coarse_evals: usize,
    pub refine_evals: usize,
    /// `ceil(rows / s) * ceil(cols / s)`.
    pub coarse_expected: usize,
    /// `window^2 * seeds`.
    pub refine_bound: usize,
    /// Seconds per timed query, warm-up excluded.
    pub times: Vec<f64>,
}

impl BenchPoint {
    pub fn median_time(&self) -> f64 {
        Quartiles::of(self.times.iter().copied()).map_or(f64::NAN, |q| q.median)
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub params: SearchParams,
    pub points: Vec<BenchPoint>,
}

/// Times every `(site, ROI fraction, pipeline)` query sequentially.
///
/// Measurements are the true corners plus seeded Gaussian noise of
/// `bench_noise_nt`, so the cost of the estimator stays out of the timings.
pub fn run_runtime_benchmark(config: &ExperimentConfig) -> Result<BenchReport> {
    let scene = Scene::build(config)?;
    if config.roi_fracs.is_empty() {
        return Err(Error::Config("roi_fracs must not be empty".into()));
    }
    let sigma = config.bench_noise_nt;
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::Config(format!("bench noise: {e}")))?;
    let mut points = Vec::new();
    for (n, s) in scene.sites.iter().enumerate() {
        let truth = scene.grid.corners(s.i, s.j).ok_or_else(|| Error::NodataSite(s.id.clone()))?.to_array();
        let mut rng = stream_rng(config.seed, &[stream::BENCH, n as u64]);
        let b_hat: Vec<f64> = truth.iter().map(|b| b + noise.sample(&mut rng)).collect();
        let m = MeasurementSet::diagonal(Corner::ALL.to_vec(), b_hat, &[sigma; 4])?;
        for &frac in &config.roi_fracs {
            let roi = Roi::around(&scene.grid, s.i, s.j, frac)?;
            for &pipeline in &config.pipelines {
                let params = SearchParams {
                    pipeline,
                    ..config.search.clone()
                };
                let first = two_metric_search(&scene.grid, &m, &roi, &params)?;
                let mut times = Vec::with_capacity(config.bench_repetitions);
                for _ in 0..config.bench_repetitions {
                    let t = Instant::now();
                    let r = two_metric_search(&scene.grid, &m, &roi, &params)?;
                    times.push(t.elapsed().as_secs_f64());
                    debug_assert_eq!(r.cell, first.cell);
                }
                let st = params.stride;
                points.push(BenchPoint {
                    site_id: s.id.clone(),
                    roi_frac: frac,
                    roi,
                    pipeline,
                    cell: first.cell,
                    d2_min: first.d2_min,
                    coarse_evals: first.coarse_evals,
                    refine_evals: first.refine_evals,
                    coarse_expected: roi.rows().div_ceil(st) * roi.cols().div_ceil(st),
                    refine_bound: params.window * params.window * params.seeds,
                    times,
                });
            }
        }
    }
    Ok(BenchReport {
        params: config.search.clone(),
        points,
    })
}

impl BenchReport {
    /// Log-log slope of median time against ROI area for one site and pipeline.
    pub fn slope(&self, site: &str, pipeline: Pipeline) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .points
            .iter()
            .filter(|p| p.site_id == site && p.pipeline == pipeline)
            .map(|p| (p.roi.area() as f64, p.median_time()))
            .collect();
        loglog_slope(&pts)
    }

    fn groups(&self) -> Vec<(String, Pipeline)> {
        let mut g: Vec<(String, Pipeline)> = Vec::new();
        for p in &self.points {
            if !g.iter().any(|(s, q)| *s == p.site_id && *q == p.pipeline) {
                g.push((p.site_id.clone(), p.pipeline));
            }
        }
        g
    }

    /// Deterministic per-query counters and results.
    pub fn counters_csv(&self) -> String {
        let mut out = String::from(
            "site,roi_frac,roi_cols,roi_rows,roi_area,pipeline,stride,seeds,window,coarse_evals,coarse_expected,refine_evals,refine_bound,est_i,est_j,d2_min\n",
        );
        let p0 = &self.params;
        for p in &self.points {
            push_row(
                &mut out,
                format_args!(
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    p.site_id,
                    p.roi_frac,
                    p.roi.cols(),
                    p.roi.rows(),
                    p.roi.area(),
                    p.pipeline,
                    p0.stride,
                    p0.seeds,
                    p0.window,
                    p.coarse_evals,
                    p.coarse_expected,
                    p.refine_evals,
                    p.refine_bound,
                    p.cell.0,
                    p.cell.1,
                    p.d2_min
                ),
            );
        }
        out
    }

    /// Median wall-clock per query and the corner-over-gradient time ratio.
    pub fn timing_csv(&self) -> String {
        let mut out = String::from("site,roi_frac,roi_area,pipeline,repetitions,min_s,median_s,max_s,median_ratio_to_grad\n");
        for p in &self.points {
            let grad = self
                .points
                .iter()
                .find(|q| q.site_id == p.site_id && q.roi_frac == p.roi_frac && q.pipeline == Pipeline::Grad)
                .map_or(f64::NAN, BenchPoint::median_time);
            let q = Quartiles::of(p.times.iter().copied());
            let (lo, hi) = q.map_or((f64::NAN, f64::NAN), |q| (q.min, q.max));
            push_row(
                &mut out,
                format_args!(
                    "{},{},{},{},{},{lo},{},{hi},{}",
                    p.site_id,
                    p.roi_frac,
                    p.roi.area(),
                    p.pipeline,
                    p.times.len(),
                    p.median_time(),
                    p.median_time() / grad
                ),
            );
        }
        out
    }

    pub fn scaling_csv(&self) -> String {
        let mut out = String::from("site,pipeline,loglog_slope\n");
        for (s, p) in self.groups() {
            push_row(&mut out, format_args!("{s},{p},{}", self.slope(&s, p).unwrap_or(f64::NAN)));
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        write_outputs(
            dir,
            &[
                ("bench_counters.csv", self.counters_csv()),
                ("bench_timing.csv", self.timing_csv()),
                ("bench_scaling.csv", self.scaling_csv()),
            ],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{MainFieldSpec, MapSource};

    fn config() -> ExperimentConfig {
        ExperimentConfig {
            map: MapSource::HighContrast { width: 80, height: 80 },
            main_field: MainFieldSpec::Constant { nt: 50_000.0 },
            roi_fracs: vec![0.25, 1.0],
            bench_repetitions: 2,
            search: SearchParams {
                stride: 4,
                seeds: 3,
                window: 5,
                ..SearchParams::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn counters_match_identities() {
        let r = run_runtime_benchmark(&config()).unwrap();
        assert_eq!(r.points.len(), 5 * 2 * 2);
        for p in &r.points {
            assert_eq!(p.coarse_evals, p.coarse_expected);
            assert!(p.refine_evals <= p.refine_bound);
            assert_eq!(p.times.len(), 2);
        }
    }

    #[test]
    fn counters_file_is_reproducible() {
        let a = run_runtime_benchmark(&config()).unwrap();
        let b = run_runtime_benchmark(&config()).unwrap();
        assert_eq!(a.counters_csv(), b.counters_csv());
        assert_eq!(a.timing_csv().lines().count(), 1 + a.points.len());
        assert_eq!(a.scaling_csv().lines().count(), 1 + 5 * 2);
    }
}
