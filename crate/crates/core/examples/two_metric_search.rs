//! The four coarse-to-fine pipelines on one noisy planted measurement.

use qmagnav::map::{feature_map, synth_map, SynthSpec};
use qmagnav::matcher::{
    exhaustive_search, localization_error, two_metric_search, Corner, MeasurementSet, Metric, Pipeline, Query, Roi,
    SearchParams,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> qmagnav::Result<()> {
    let map = synth_map(&SynthSpec::high_contrast(300, 240), &mut ChaCha8Rng::seed_from_u64(11))?;
    let grid = feature_map(&map)?;
    let truth = (171, 94);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b: Vec<f64> = grid.corners(truth.0, truth.1).unwrap().to_array().iter().map(|v| v + noise.sample(&mut rng)).collect();
    let m = MeasurementSet::diagonal(Corner::ALL.to_vec(), b, &[0.3; 4])?;
    let roi = Roi::full(&grid);

    let q = Query::new(&grid, &m, Metric::Gradient, 1e-9)?;
    let ex = exhaustive_search(&grid, &q, &roi, 5)?;
    println!("exhaustive gradient: {:?} after {} cells", ex.cell, ex.coarse_evals);
    for (pipeline, stride) in [(Pipeline::Grad, 8), (Pipeline::GradCorner, 8), (Pipeline::Corner, 1), (Pipeline::CornerGrad, 1)] {
        let params = SearchParams { stride, seeds: 5, window: 17, pipeline, ..SearchParams::default() };
        let r = two_metric_search(&grid, &m, &roi, &params)?;
        println!(
            "{pipeline:<12} stride {stride}: {:?} d2 {:.3} error {:.0} m, {} coarse + {} refine evals",
            r.cell,
            r.d2_min,
            localization_error(&grid, truth, r.cell),
            r.coarse_evals,
            r.refine_evals
        );
    }
    Ok(())
}
