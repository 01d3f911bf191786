//! Search time against ROI area, with the counter identities checked.

use qmagnav::harness::{run_runtime_benchmark, AutoSites, ExperimentConfig, MapSource};
use qmagnav::matcher::{Pipeline, SearchParams};

fn main() -> qmagnav::Result<()> {
    let config = ExperimentConfig {
        map: MapSource::HighContrast { width: 513, height: 513 },
        auto_sites: AutoSites { count: 1, ..AutoSites::default() },
        roi_fracs: vec![1.0 / 64.0, 1.0 / 16.0, 0.25, 1.0],
        bench_repetitions: 9,
        search: SearchParams { stride: 2, seeds: 5, window: 9, ..SearchParams::default() },
        ..ExperimentConfig::default()
    };
    let r = run_runtime_benchmark(&config)?;
    for p in &r.points {
        assert_eq!(p.coarse_evals, p.coarse_expected);
        assert!(p.refine_evals <= p.refine_bound);
        println!("{:<7} area {:>7}  median {:>9.6} s  coarse {:>6}  refine {:>3}", p.pipeline, p.roi.area(), p.median_time(), p.coarse_evals, p.refine_evals);
    }
    for pipeline in [Pipeline::Grad, Pipeline::Corner] {
        println!("{pipeline}: log-log slope {:.2}", r.slope("s000", pipeline).unwrap_or(f64::NAN));
    }
    Ok(())
}
