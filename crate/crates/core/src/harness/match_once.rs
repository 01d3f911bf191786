use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::cell_center;
use crate::error::{Error, Result};
use crate::map::{feature_map, load_raster, RasterFormat};
use crate::matcher::{two_metric_search, Corner, MatchResult, MeasurementSet, Roi, SearchParams};

/// JSON measurement accepted by `match`: values in nT with either per-corner
/// standard deviations or a full covariance in nT^2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementFile {
    pub corners: Vec<Corner>,
    pub b_hat_nt: Vec<f64>,
    #[serde(default)]
    pub sigma_nt: Option<Vec<f64>>,
    #[serde(default)]
    pub cov_nt2: Option<Vec<Vec<f64>>>,
}

impl MeasurementFile {
    pub fn to_measurement(&self) -> Result<MeasurementSet> {
        match (&self.sigma_nt, &self.cov_nt2) {
            (Some(s), None) => MeasurementSet::diagonal(self.corners.clone(), self.b_hat_nt.clone(), s),
            (None, Some(rows)) => {
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(Error::DimensionMismatch("cov_nt2 must be square".into()));
                }
                let m = DMatrix::from_fn(n, n, |a, b| rows[a][b]);
                MeasurementSet::new(self.corners.clone(), self.b_hat_nt.clone(), m)
            }
            _ => Err(Error::Config("give exactly one of sigma_nt or cov_nt2".into())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MatchReport {
    pub result: MatchResult,
    /// Centre of the matched cell, degrees.
    pub lat: f64,
    pub lon: f64,
    pub sensors: usize,
    pub params: SearchParams,
}

/// Loads a total-field raster and a measurement file and runs one search
/// over the whole map.
pub fn cmd_match_once(
    map_path: &Path,
    format: Option<RasterFormat>,
    measurement_path: &Path,
    params: &SearchParams,
) -> Result<MatchReport> {
    let text = std::fs::read_to_string(measurement_path).map_err(|e| Error::io(measurement_path, e))?;
    let file: MeasurementFile = serde_json::from_str(&text)?;
    let m = file.to_measurement()?;
    let raster = load_raster(map_path, format.unwrap_or_else(|| RasterFormat::from_path(map_path)))?;
    let grid = feature_map(&raster)?;
    let result = two_metric_search(&grid, &m, &Roi::full(&grid), params)?;
    let (lat, lon) = cell_center(&raster, result.cell.0, result.cell.1);
    Ok(MatchReport {
        result,
        lat,
        lon,
        sensors: m.len(),
        params: params.clone(),
    })
}

impl fmt::Display for MatchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = &self.result;
        writeln!(f, "pipeline: {}", self.params.pipeline)?;
        writeln!(f, "sensors: {}", self.sensors)?;
        writeln!(f, "cell_i: {}", r.cell.0)?;
        writeln!(f, "cell_j: {}", r.cell.1)?;
        writeln!(f, "lat_deg: {}", self.lat)?;
        writeln!(f, "lon_deg: {}", self.lon)?;
        writeln!(f, "d2_min: {}", r.d2_min)?;
        writeln!(f, "coarse_evals: {}", r.coarse_evals)?;
        writeln!(f, "refine_evals: {}", r.refine_evals)?;
        writeln!(f, "elapsed_s: {}", r.elapsed)?;
        writeln!(f, "top_k:")?;
        for (k, c) in r.top_k.iter().enumerate() {
            writeln!(f, "  {} {} {} {}", k + 1, c.i, c.j, c.d2)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{save_raster, synth_map, SynthSpec};
    use crate::matcher::Pipeline;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture(dir: &Path) -> (std::path::PathBuf, crate::map::FeatureGrid) {
        let r = synth_map(&SynthSpec::high_contrast(60, 50), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let path = dir.join("map.magr");
        save_raster(&r, &path, RasterFormat::Bin).unwrap();
        (path, feature_map(&r).unwrap())
    }

    fn write_meas(dir: &Path, m: &MeasurementFile) -> std::path::PathBuf {
        let p = dir.join("m.json");
        std::fs::write(&p, serde_json::to_string(m).unwrap()).unwrap();
        p
    }

    #[test]
    fn planted_measurement_found() {
        let dir = tempfile::tempdir().unwrap();
        let (map, grid) = fixture(dir.path());
        let b = grid.corners(17, 23).unwrap().to_array().to_vec();
        let m = MeasurementFile {
            corners: Corner::ALL.to_vec(),
            b_hat_nt: b,
            sigma_nt: Some(vec![0.5; 4]),
            cov_nt2: None,
        };
        let meas = write_meas(dir.path(), &m);
        let params = SearchParams {
            stride: 1,
            window: 3,
            ..SearchParams::default()
        };
        let r = cmd_match_once(&map, None, &meas, &params).unwrap();
        assert_eq!(r.result.cell, (17, 23));
        let text = r.to_string();
        assert!(text.contains("cell_i: 17\ncell_j: 23\n") && text.contains("top_k:\n  1 17 23 "));
    }

    #[test]
    fn gradient_with_one_sensor_is_a_contract_error() {
        let dir = tempfile::tempdir().unwrap();
        let (map, grid) = fixture(dir.path());
        let m = MeasurementFile {
            corners: vec![Corner::LL],
            b_hat_nt: vec![grid.corners(5, 5).unwrap().b_ll],
            sigma_nt: None,
            cov_nt2: Some(vec![vec![1.0]]),
        };
        let meas = write_meas(dir.path(), &m);
        let mut params = SearchParams {
            stride: 1,
            window: 3,
            pipeline: Pipeline::Grad,
            ..SearchParams::default()
        };
        let e = cmd_match_once(&map, None, &meas, &params).unwrap_err();
        assert_eq!(e.exit_code(), 3, "{e}");
        params.pipeline = Pipeline::Corner;
        assert!(cmd_match_once(&map, None, &meas, &params).is_ok());
    }

    #[test]
    fn malformed_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let (map, _) = fixture(dir.path());
        let p = dir.path().join("bad.json");
        std::fs::write(&p, "{\"corners\": [\"LL\"], \"b_hat_nt\": [1.0,").unwrap();
        let e = cmd_match_once(&map, None, &p, &SearchParams::default()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        std::fs::write(&p, "{\"corners\": [\"XX\"], \"b_hat_nt\": [1.0], \"sigma_nt\": [1.0]}").unwrap();
        assert_eq!(cmd_match_once(&map, None, &p, &SearchParams::default()).unwrap_err().exit_code(), 2);
    }
}
