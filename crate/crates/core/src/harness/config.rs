use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::crlb::ClassicalSensorModel;
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::map::{RasterFormat, SynthSpec};
use crate::matcher::{Pipeline, SearchParams};
use crate::sensor::NvSensorModel;

pub const SCHEMA_VERSION: u32 = 1;

/// Where the anomaly raster comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapSource {
    Synth(SynthSpec),
    /// Preset of [`SynthSpec::high_contrast`] with the given size.
    HighContrast { width: usize, height: usize },
    File { path: PathBuf, format: Option<RasterFormat> },
}

impl Default for MapSource {
    fn default() -> Self {
        MapSource::HighContrast {
            width: 200,
            height: 200,
        }
    }
}

/// Main field added to the anomaly to form the total field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MainFieldSpec {
    None,
    Constant { nt: f64 },
    Dipole {
        #[serde(default = "default_b0")]
        b0: f64,
        #[serde(default = "default_pole_lat")]
        pole_lat: f64,
        #[serde(default = "default_pole_lon")]
        pole_lon: f64,
    },
    Grid { path: PathBuf, format: Option<RasterFormat> },
}

fn default_b0() -> f64 {
    29_404.8
}

fn default_pole_lat() -> f64 {
    80.65
}

fn default_pole_lon() -> f64 {
    -72.68
}

impl Default for MainFieldSpec {
    fn default() -> Self {
        MainFieldSpec::Dipole {
            b0: default_b0(),
            pole_lat: default_pole_lat(),
            pole_lon: default_pole_lon(),
        }
    }
}

/// An explicit trial site: a cell index or the cell whose upper-left pixel
/// contains a geographic point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteSpec {
    Cell([usize; 2]),
    Latlon([f64; 2]),
}

/// Randomly drawn sites among valid cells with enough gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoSites {
    pub count: usize,
    /// Minimum `|grad B|` at the site, nT/m.
    pub min_gradient: f64,
    /// Cells kept clear of every map edge.
    pub margin: usize,
}

impl Default for AutoSites {
    fn default() -> Self {
        Self {
            count: 5,
            min_gradient: 0.0,
            margin: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrlbSettings {
    pub t_total: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub points: usize,
    pub classical: Vec<ClassicalSensorModel>,
}

impl Default for CrlbSettings {
    fn default() -> Self {
        Self {
            t_total: 1.5,
            tau_min: 1e-6,
            tau_max: 1.4e-3,
            points: 200,
            // Illustrative levels inside the plotted range, not device data;
            // substitute the variances of the sensors being compared.
            classical: vec![
                ClassicalSensorModel {
                    label: "HMC5983_placeholder".into(),
                    sigma: 1e-9,
                },
                ClassicalSensorModel {
                    label: "AKM8975_placeholder".into(),
                    sigma: 3e-9,
                },
            ],
        }
    }
}

/// One JSON experiment manifest shared by every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads for trial pools; 0 uses every core.
    pub workers: usize,
    pub map: MapSource,
    pub main_field: MainFieldSpec,
    pub sites: Vec<SiteSpec>,
    /// Used when `sites` is empty.
    pub auto_sites: AutoSites,
    /// Sensing budgets per corner, seconds.
    pub budgets: Vec<f64>,
    pub sensor_counts: Vec<usize>,
    pub repetitions: usize,
    pub pipelines: Vec<Pipeline>,
    pub search: SearchParams,
    /// Area fraction of the search ROI around each site in localization runs.
    pub localization_roi_frac: f64,
    /// Area fractions swept by the runtime benchmark.
    pub roi_fracs: Vec<f64>,
    /// Timed queries per benchmark point, after one discarded warm-up.
    pub bench_repetitions: usize,
    /// Per-corner noise of benchmark measurements, nT.
    pub bench_noise_nt: f64,
    pub sensor: NvSensorModel,
    pub estimator: EstimatorConfig,
    pub crlb: CrlbSettings,
    /// Raster format written by `synth-map`.
    pub format: RasterFormat,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            out_dir: PathBuf::from("out"),
            workers: 0,
            map: MapSource::default(),
            main_field: MainFieldSpec::default(),
            sites: Vec::new(),
            auto_sites: AutoSites::default(),
            budgets: vec![0.05, 0.1, 0.3, 0.6, 1.5],
            sensor_counts: vec![1, 2, 3, 4],
            repetitions: 10,
            pipelines: vec![Pipeline::Grad, Pipeline::Corner],
            search: SearchParams {
                stride: 1,
                seeds: 5,
                window: 3,
                ..SearchParams::default()
            },
            localization_roi_frac: 1.0,
            roi_fracs: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            bench_repetitions: 7,
            bench_noise_nt: 0.3,
            sensor: NvSensorModel::default(),
            estimator: EstimatorConfig::default(),
            crlb: CrlbSettings::default(),
            format: RasterFormat::Asc,
        }
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::from_json(&text)?;
        // Relative raster paths are resolved against the manifest's directory.
        let base = path.parent().unwrap_or(Path::new(""));
        if let MapSource::File { path: p, .. } = &mut c.map {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let MainFieldSpec::Grid { path: p, .. } = &mut c.main_field {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.repetitions == 0 {
            return Err(bad("repetitions must be at least 1"));
        }
        if self.budgets.is_empty() || self.budgets.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
            return Err(bad("budgets must be a non-empty list of positive seconds"));
        }
        if self.sensor_counts.is_empty() || self.sensor_counts.iter().any(|&s| !(1..=4).contains(&s)) {
            return Err(bad("sensor_counts must be a non-empty subset of 1..=4"));
        }
        if self.pipelines.is_empty() {
            return Err(bad("pipelines must not be empty"));
        }
        let frac_ok = |f: f64| f > 0.0 && f <= 1.0;
        if !frac_ok(self.localization_roi_frac) || self.roi_fracs.iter().any(|&f| !frac_ok(f)) {
            return Err(bad("ROI fractions must lie in (0, 1]"));
        }
        if self.bench_repetitions == 0 || !(self.bench_noise_nt > 0.0) {
            return Err(bad("bench_repetitions must be >= 1 and bench_noise_nt positive"));
        }
        if self.sites.is_empty() && self.auto_sites.count == 0 {
            return Err(bad("no sites: give `sites` or a positive `auto_sites.count`"));
        }
        self.sensor.validate()?;
        self.estimator.validate()?;
        Ok(())
    }
}
