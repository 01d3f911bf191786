//! Seeded experiment drivers behind the command-line tool.
//!
//! Every run takes an [`ExperimentConfig`], builds the same [`Scene`] from
//! the root seed and returns plain records that serialise to CSV. Trials draw
//! their randomness from [`stream_seed`] keyed by what they are, so outputs do
//! not depend on the worker count or on which other trials ran.

mod bench;
mod config;
mod crlb_run;
mod localize;
mod match_once;
mod sweep;
mod svg;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use bench::{run_runtime_benchmark, BenchPoint, BenchReport};
pub use config::{AutoSites, CrlbSettings, ExperimentConfig, MainFieldSpec, MapSource, SiteSpec, SCHEMA_VERSION};
pub use crlb_run::{run_crlb_curves, CrlbReport};
pub use localize::{run_localization_sweep, LocalizationReport, LocalizationTrial};
pub use match_once::{cmd_match_once, MatchReport, MeasurementFile};
pub use sweep::{estimate_corners, run_field_estimation_sweep, CornerTrial, FieldSweep, FieldTrial};

use crate::error::{Error, Result};
use crate::map::{
    feature_map, gradient_magnitude_map, load_raster, save_raster, synth_map, total_field, ConstantField,
    DipoleField, FeatureGrid, GridField, MagRaster, MainFieldProvider, RasterFormat, SynthSpec, ZeroField,
};

/// Stream tags mixed into [`stream_seed`].
pub mod stream {
    pub const MAP: u64 = 1;
    pub const SITES: u64 = 2;
    pub const ESTIMATE: u64 = 3;
    pub const BENCH: u64 = 4;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the child stream named by `parts` under `root`.
pub fn stream_seed(root: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(root), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn stream_rng(root: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(root, parts))
}

/// A trial location: cell `(i, j)` of the feature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub id: String,
    pub i: usize,
    pub j: usize,
    /// Centre of the cell, degrees.
    pub lat: f64,
    pub lon: f64,
}

/// Map, derived features and resolved sites shared by the runs.
#[derive(Debug, Clone)]
pub struct Scene {
    pub anomaly: MagRaster,
    pub total: MagRaster,
    pub grid: FeatureGrid,
    pub sites: Vec<Site>,
}

/// Geographic centre of cell `(i, j)`: the shared corner of its four pixels.
pub fn cell_center(raster: &MagRaster, i: usize, j: usize) -> (f64, f64) {
    let (lat, lon) = raster.pixel_latlon(i, j);
    let f = raster.frame();
    (lat - 0.5 * f.cell_dlat, lon + 0.5 * f.cell_dlon)
}

fn load(path: &Path, format: Option<RasterFormat>) -> Result<MagRaster> {
    load_raster(path, format.unwrap_or_else(|| RasterFormat::from_path(path)))
}

impl Scene {
    pub fn anomaly_for(config: &ExperimentConfig) -> Result<MagRaster> {
        match &config.map {
            MapSource::Synth(spec) => synth_map(spec, &mut stream_rng(config.seed, &[stream::MAP])),
            MapSource::HighContrast { width, height } => synth_map(
                &SynthSpec::high_contrast(*width, *height),
                &mut stream_rng(config.seed, &[stream::MAP]),
            ),
            MapSource::File { path, format } => load(path, *format),
        }
    }

    pub fn total_for(config: &ExperimentConfig, anomaly: &MagRaster) -> Result<MagRaster> {
        let provider: Box<dyn MainFieldProvider> = match &config.main_field {
            MainFieldSpec::None => Box::new(ZeroField),
            MainFieldSpec::Constant { nt } => Box::new(ConstantField(*nt)),
            MainFieldSpec::Dipole { b0, pole_lat, pole_lon } => Box::new(DipoleField {
                b0: *b0,
                pole_lat: *pole_lat,
                pole_lon: *pole_lon,
            }),
            MainFieldSpec::Grid { path, format } => Box::new(GridField(load(path, *format)?)),
        };
        total_field(anomaly, provider.as_ref())
    }

    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let anomaly = Self::anomaly_for(config)?;
        let total = Self::total_for(config, &anomaly)?;
        let grid = feature_map(&total)?;
        let sites = resolve_sites(config, &total, &grid)?;
        Ok(Self {
            anomaly,
            total,
            grid,
            sites,
        })
    }
}

fn resolve_sites(config: &ExperimentConfig, total: &MagRaster, grid: &FeatureGrid) -> Result<Vec<Site>> {
    let site = |n: usize, i: usize, j: usize| {
        let (lat, lon) = cell_center(total, i, j);
        Site {
            id: format!("s{n:03}"),
            i,
            j,
            lat,
            lon,
        }
    };
    if !config.sites.is_empty() {
        return config
            .sites
            .iter()
            .enumerate()
            .map(|(n, s)| {
                let (i, j) = match *s {
                    SiteSpec::Cell([i, j]) => (i, j),
                    SiteSpec::Latlon([lat, lon]) => total
                        .pixel_at(lat, lon)
                        .ok_or_else(|| Error::SiteOutOfMap(format!("#{n} at ({lat}, {lon})")))?,
                };
                if i >= grid.width() || j >= grid.height() {
                    return Err(Error::SiteOutOfMap(format!("#{n} at cell ({i}, {j})")));
                }
                if !grid.is_valid(i, j) {
                    return Err(Error::NodataSite(format!("#{n} at cell ({i}, {j})")));
                }
                Ok(site(n, i, j))
            })
            .collect();
    }
    let auto = &config.auto_sites;
    let grad = gradient_magnitude_map(grid);
    let m = auto.margin;
    let mut pool = Vec::new();
    for j in m..grid.height().saturating_sub(m) {
        for i in m..grid.width().saturating_sub(m) {
            if grad[grid.index(i, j)].is_some_and(|g| g >= auto.min_gradient) {
                pool.push((i, j));
            }
        }
    }
    if pool.len() < auto.count {
        return Err(Error::Config(format!(
            "only {} cells satisfy the automatic site filter, {} requested",
            pool.len(),
            auto.count
        )));
    }
    let mut rng = stream_rng(config.seed, &[stream::SITES]);
    Ok(pool
        .choose_multiple(&mut rng, auto.count)
        .enumerate()
        .map(|(n, &(i, j))| site(n, i, j))
        .collect())
}

/// Runs `f` over `items` on a pool of `workers` threads (0 = all cores) and
/// returns the results in input order.
pub fn run_pool<T, U, F>(workers: usize, items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(&f).collect()))
}

/// Median and quartiles by linear interpolation between order statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub n: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Quartiles {
    /// Summary of the finite entries of `values`; `None` if there are none.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(Self {
            n: v.len(),
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
            min: v[0],
            max: v[v.len() - 1],
        })
    }

    pub(crate) const CSV_HEADER: &'static str = "n,min,q1,median,q3,max";

    pub(crate) fn csv(&self) -> String {
        format!("{},{},{},{},{},{}", self.n, self.min, self.q1, self.median, self.q3, self.max)
    }

    pub(crate) fn csv_empty() -> &'static str {
        "0,NaN,NaN,NaN,NaN,NaN"
    }
}

pub(crate) fn quartile_cells(q: Option<Quartiles>) -> String {
    q.map_or_else(|| Quartiles::csv_empty().to_string(), |q| q.csv())
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Writes `(file name, contents)` pairs into `dir`, creating it if needed.
pub fn write_outputs(dir: &Path, files: &[(&str, String)]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    files
        .iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

/// Writes the anomaly and total-field rasters of the configured map.
pub fn write_synth_map(config: &ExperimentConfig, dir: &Path, format: RasterFormat) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let anomaly = Scene::anomaly_for(config)?;
    let total = Scene::total_for(config, &anomaly)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for (stem, r) in [("anomaly", &anomaly), ("total_field", &total)] {
        let path = dir.join(format!("{stem}.{}", format.extension()));
        save_raster(r, &path, format)?;
        out.push(path);
    }
    Ok(out)
}

pub(crate) fn push_row(out: &mut String, cells: std::fmt::Arguments<'_>) {
    out.write_fmt(cells).unwrap();
    out.push('\n');
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_seeds_separate_keys() {
        let a = stream_seed(7, &[3, 0, 1]);
        assert_eq!(a, stream_seed(7, &[3, 0, 1]));
        assert_ne!(a, stream_seed(7, &[3, 1, 0]));
        assert_ne!(a, stream_seed(8, &[3, 0, 1]));
        assert_ne!(stream_seed(7, &[]), stream_seed(7, &[0]));
    }

    #[test]
    fn quartiles_interpolate() {
        let q = Quartiles::of([4.0, 1.0, 3.0, 2.0, f64::NAN]).unwrap();
        assert_eq!((q.n, q.min, q.max), (4, 1.0, 4.0));
        assert_eq!((q.q1, q.median, q.q3), (1.75, 2.5, 3.25));
        assert!(Quartiles::of([f64::NAN]).is_none());
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [1.0, 4.0, 16.0, 64.0].iter().map(|&x: &f64| (x, 3.0 * x.powf(0.9))).collect();
        assert!((loglog_slope(&pts).unwrap() - 0.9).abs() < 1e-12);
        assert!(loglog_slope(&pts[..1]).is_none());
    }

    #[test]
    fn pool_keeps_order() {
        let items: Vec<u64> = (0..50).collect();
        let out = run_pool(3, &items, |&x| x * x).unwrap();
        assert_eq!(out, items.iter().map(|x| x * x).collect::<Vec<_>>());
    }

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            map: MapSource::HighContrast { width: 40, height: 30 },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn scene_resolves_sites() {
        let mut c = small_config();
        c.sites = vec![SiteSpec::Cell([3, 4])];
        let s = Scene::build(&c).unwrap();
        assert_eq!((s.sites[0].i, s.sites[0].j), (3, 4));
        let (lat, lon) = s.total.pixel_latlon(3, 4);
        let site = &s.sites[0];
        assert!(site.lat < lat && site.lon > lon);

        let (plat, plon) = s.total.pixel_latlon(10, 7);
        c.sites = vec![SiteSpec::Latlon([plat, plon])];
        let s = Scene::build(&c).unwrap();
        assert_eq!((s.sites[0].i, s.sites[0].j), (10, 7));

        c.sites = vec![SiteSpec::Cell([39, 0])];
        assert!(matches!(Scene::build(&c), Err(Error::SiteOutOfMap(_))));
        c.sites = vec![SiteSpec::Latlon([0.0, 0.0])];
        assert!(matches!(Scene::build(&c), Err(Error::SiteOutOfMap(_))));
    }

    #[test]
    fn nodata_site_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = vec![10.0; 36];
        v[6 + 2] = crate::map::DEFAULT_NODATA;
        let r = MagRaster::new(6, 6, crate::map::GeoFrame::square(35.0, -100.0, 0.01), v, crate::map::DEFAULT_NODATA)
            .unwrap();
        let path = dir.path().join("m.asc");
        save_raster(&r, &path, RasterFormat::Asc).unwrap();
        let mut c = ExperimentConfig {
            map: MapSource::File { path, format: None },
            sites: vec![SiteSpec::Cell([1, 1])],
            ..ExperimentConfig::default()
        };
        assert!(matches!(Scene::build(&c), Err(Error::NodataSite(_))));
        c.sites = vec![SiteSpec::Cell([4, 4])];
        assert!(Scene::build(&c).is_ok());
    }

    #[test]
    fn auto_sites_respect_filter_and_seed() {
        let mut c = ExperimentConfig {
            map: MapSource::HighContrast { width: 100, height: 80 },
            ..ExperimentConfig::default()
        };
        c.auto_sites = AutoSites {
            count: 6,
            min_gradient: 0.05,
            margin: 3,
        };
        let a = Scene::build(&c).unwrap();
        let b = Scene::build(&c).unwrap();
        assert_eq!(a.sites, b.sites);
        let grad = gradient_magnitude_map(&a.grid);
        for s in &a.sites {
            assert!(grad[a.grid.index(s.i, s.j)].unwrap() >= 0.05);
            assert!(s.i >= 3 && s.j >= 3 && s.i < a.grid.width() - 3 && s.j < a.grid.height() - 3);
        }
        c.auto_sites.min_gradient = 1e9;
        assert!(matches!(Scene::build(&c), Err(Error::Config(_))));
    }

    #[test]
    fn synth_map_files_written() {
        let dir = tempfile::tempdir().unwrap();
        let c = small_config();
        let files = write_synth_map(&c, dir.path(), RasterFormat::Bin).unwrap();
        let total = load_raster(&files[1], RasterFormat::Bin).unwrap();
        assert_eq!(total, Scene::build(&c).unwrap().total);
    }
}
