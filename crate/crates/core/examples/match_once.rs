//! File-based single query: a raster on disk and a JSON measurement.

use qmagnav::harness::{cmd_match_once, MeasurementFile};
use qmagnav::map::{feature_map, save_raster, synth_map, RasterFormat, SynthSpec};
use qmagnav::matcher::{Corner, Pipeline, SearchParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> qmagnav::Result<()> {
    let dir = std::env::temp_dir().join("qmagnav_match_once");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let map = synth_map(&SynthSpec::high_contrast(150, 120), &mut ChaCha8Rng::seed_from_u64(21))?;
    let map_path = dir.join("total_field.asc");
    save_raster(&map, &map_path, RasterFormat::Asc)?;

    let grid = feature_map(&map)?;
    let b = grid.corners(40, 77).unwrap().to_array();
    let meas = MeasurementFile {
        corners: vec![Corner::LL, Corner::LR],
        b_hat_nt: vec![b[0] + 0.2, b[1] - 0.1],
        sigma_nt: Some(vec![0.3, 0.3]),
        cov_nt2: None,
    };
    let meas_path = dir.join("measurement.json");
    std::fs::write(&meas_path, serde_json::to_string_pretty(&meas).unwrap()).expect("write measurement");
    let params = SearchParams { stride: 1, window: 3, pipeline: Pipeline::Corner, ..SearchParams::default() };
    print!("{}", cmd_match_once(&map_path, None, &meas_path, &params)?);
    Ok(())
}
