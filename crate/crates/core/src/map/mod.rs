//! Magnetic rasters, planar spacing, main-field synthesis and 2x2 cell features.
//!
//! Index convention: `values[j * width + i]`, with `i` the column counted
//! eastward and `j` the row counted southward from the northern edge, exactly
//! the order rows appear in an ESRI ASCII grid. A cell `(i, j)` is the 2x2
//! block of pixels `(i..=i+1, j..=j+1)`; its lower (southern) edge is row
//! `j + 1`, so the corner names follow the picture:
//!
//! ```text
//!   UL = B(i, j)      UR = B(i+1, j)
//!   LL = B(i, j+1)    LR = B(i+1, j+1)
//! ```

mod features;
mod field;
mod io;
mod synth;

pub(crate) use features::apply_stencil;
pub use features::{
    cell_corners, feature_map, gradient_magnitude_map, stencil, CellFeature, CornerVector, FeatureGrid,
    StencilMatrix,
};
pub use field::{total_field, ConstantField, DipoleField, GridField, MainFieldProvider, ZeroField};
pub use io::{load_raster, read_asc, read_bin, save_raster, write_asc, write_bin, RasterFormat};
pub use synth::{synth_map, SynthSpec};

use crate::error::{Error, Result};

/// Mean Earth radius used for the local equirectangular projection, metres.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Default sentinel used when writing masked pixels.
pub const DEFAULT_NODATA: f64 = -9999.0;

/// Regular lat/lon grid of total-field or anomaly values in nanotesla.
#[derive(Debug, Clone, PartialEq)]
pub struct MagRaster {
    width: usize,
    height: usize,
    /// Latitude of the southern edge, degrees.
    origin_lat: f64,
    /// Longitude of the western edge, degrees.
    origin_lon: f64,
    cell_dlat: f64,
    cell_dlon: f64,
    hx: f64,
    hy: f64,
    nodata_value: f64,
    values: Vec<f64>,
    nodata: Vec<bool>,
}

/// Geographic placement of a raster. `origin_*` is the south-west corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoFrame {
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub cell_dlat: f64,
    pub cell_dlon: f64,
}

impl GeoFrame {
    /// Square cells of `cell_deg` degrees.
    pub fn square(origin_lat: f64, origin_lon: f64, cell_deg: f64) -> Self {
        Self {
            origin_lat,
            origin_lon,
            cell_dlat: cell_deg,
            cell_dlon: cell_deg,
        }
    }
}

impl MagRaster {
    /// Builds a raster; pixels equal to `nodata_value` are masked.
    ///
    /// Planar spacing follows from the geographic frame via [`to_planar`].
    pub fn new(width: usize, height: usize, frame: GeoFrame, values: Vec<f64>, nodata_value: f64) -> Result<Self> {
        let nodata = values.iter().map(|&v| v == nodata_value || v.is_nan()).collect();
        Self::with_mask(width, height, frame, values, nodata, nodata_value)
    }

    /// Builds a raster with an explicit mask; masked pixels are overwritten
    /// with `nodata_value`.
    pub fn with_mask(
        width: usize,
        height: usize,
        frame: GeoFrame,
        mut values: Vec<f64>,
        nodata: Vec<bool>,
        nodata_value: f64,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::DimensionMismatch(format!("raster must be non-empty, got {width}x{height}")));
        }
        if values.len() != width * height || nodata.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} raster needs {} values, got {} values and {} mask entries",
                width * height,
                values.len(),
                nodata.len()
            )));
        }
        for (k, (v, &masked)) in values.iter_mut().zip(&nodata).enumerate() {
            if masked {
                *v = nodata_value;
            } else if !v.is_finite() {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!("non-finite value {v} at pixel {k}"),
                });
            }
        }
        let mut r = Self {
            width,
            height,
            origin_lat: frame.origin_lat,
            origin_lon: frame.origin_lon,
            cell_dlat: frame.cell_dlat,
            cell_dlon: frame.cell_dlon,
            hx: 0.0,
            hy: 0.0,
            nodata_value,
            values,
            nodata,
        };
        let (hx, hy) = to_planar(&r)?;
        r.hx = hx;
        r.hy = hy;
        Ok(r)
    }

    /// Raster with explicit planar spacing, placed on a nominal frame at the
    /// equator. Useful for analytic surfaces where only `hx`, `hy` matter.
    pub fn planar(width: usize, height: usize, hx: f64, hy: f64, values: Vec<f64>) -> Result<Self> {
        if !(hx > 0.0 && hy > 0.0 && hx.is_finite() && hy.is_finite()) {
            return Err(Error::InvalidParams(format!("spacing ({hx}, {hy}) must be positive")));
        }
        let deg = |h: f64| (h / EARTH_RADIUS_M).to_degrees();
        let frame = GeoFrame {
            origin_lat: 0.0,
            origin_lon: 0.0,
            cell_dlat: deg(hy),
            cell_dlon: deg(hx),
        };
        let mut r = Self::with_mask(width, height, frame, values, vec![false; width * height], DEFAULT_NODATA)?;
        r.hx = hx;
        r.hy = hy;
        Ok(r)
    }

    /// Raster of `f(i, j)` on a planar grid.
    pub fn from_fn(width: usize, height: usize, hx: f64, hy: f64, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let values = (0..height).flat_map(|j| (0..width).map(move |i| (i, j))).map(|(i, j)| f(i, j)).collect();
        Self::planar(width, height, hx, hy, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frame(&self) -> GeoFrame {
        GeoFrame {
            origin_lat: self.origin_lat,
            origin_lon: self.origin_lon,
            cell_dlat: self.cell_dlat,
            cell_dlon: self.cell_dlon,
        }
    }

    /// Planar pixel spacing `(hx, hy)` in metres.
    pub fn spacing(&self) -> (f64, f64) {
        (self.hx, self.hy)
    }

    pub fn nodata_value(&self) -> f64 {
        self.nodata_value
    }

    /// Row-major pixel values; masked pixels hold the nodata sentinel.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.nodata
    }

    fn index(&self, i: usize, j: usize) -> Result<usize> {
        if i >= self.width || j >= self.height {
            return Err(Error::OutOfBounds {
                i,
                j,
                width: self.width,
                height: self.height,
            });
        }
        Ok(j * self.width + i)
    }

    /// Pixel value, `None` when masked.
    pub fn get(&self, i: usize, j: usize) -> Result<Option<f64>> {
        let k = self.index(i, j)?;
        Ok((!self.nodata[k]).then_some(self.values[k]))
    }

    pub fn is_nodata(&self, i: usize, j: usize) -> bool {
        self.index(i, j).map(|k| self.nodata[k]).unwrap_or(true)
    }

    /// Latitude of the raster centre, degrees.
    pub fn center_lat(&self) -> f64 {
        self.origin_lat + 0.5 * self.height as f64 * self.cell_dlat
    }

    /// Geographic centre `(lat, lon)` of pixel `(i, j)`.
    pub fn pixel_latlon(&self, i: usize, j: usize) -> (f64, f64) {
        let lat = self.origin_lat + (self.height as f64 - j as f64 - 0.5) * self.cell_dlat;
        let lon = self.origin_lon + (i as f64 + 0.5) * self.cell_dlon;
        (lat, lon)
    }

    /// Pixel containing `(lat, lon)`, if inside the raster.
    pub fn pixel_at(&self, lat: f64, lon: f64) -> Option<(usize, usize)> {
        let fx = (lon - self.origin_lon) / self.cell_dlon;
        let fy = (lat - self.origin_lat) / self.cell_dlat;
        if !(fx >= 0.0 && fy >= 0.0 && fx < self.width as f64 && fy < self.height as f64) {
            return None;
        }
        Some((fx as usize, self.height - 1 - fy as usize))
    }

    /// Same grid with `f` applied to every unmasked value.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for (v, &m) in out.values.iter_mut().zip(&self.nodata) {
            if !m {
                *v = f(*v);
            }
        }
        out
    }
}

/// Local equirectangular pixel spacing `(hx, hy)` in metres at the raster centre.
pub fn to_planar(raster: &MagRaster) -> Result<(f64, f64)> {
    let lat_c = raster.center_lat();
    if !(lat_c.abs() < 89.0) {
        return Err(Error::PolarDegenerate(lat_c));
    }
    let hy = EARTH_RADIUS_M * raster.cell_dlat.to_radians();
    let hx = EARTH_RADIUS_M * lat_c.to_radians().cos() * raster.cell_dlon.to_radians();
    if !(hx > 0.0 && hy > 0.0 && hx.is_finite() && hy.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "cell size ({}, {}) deg must be positive",
            raster.cell_dlat, raster.cell_dlon
        )));
    }
    Ok((hx, hy))
}
