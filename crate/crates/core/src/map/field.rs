use super::MagRaster;
use crate::error::{Error, Result};

/// Smooth core-field magnitude as a function of position, nanotesla.
pub trait MainFieldProvider: Send + Sync {
    fn field_nt(&self, lat: f64, lon: f64) -> Result<f64>;
}

/// No main field; `total_field` with this provider returns the anomaly.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroField;

impl MainFieldProvider for ZeroField {
    fn field_nt(&self, _lat: f64, _lon: f64) -> Result<f64> {
        Ok(0.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantField(pub f64);

impl MainFieldProvider for ConstantField {
    fn field_nt(&self, _lat: f64, _lon: f64) -> Result<f64> {
        Ok(self.0)
    }
}

/// Centred tilted dipole: `|B| = B0 sqrt(1 + 3 sin^2(lambda_m))`, with
/// `lambda_m` the geomagnetic latitude about the dipole pole.
#[derive(Debug, Clone, Copy)]
pub struct DipoleField {
    /// Equatorial surface field, nT.
    pub b0: f64,
    pub pole_lat: f64,
    pub pole_lon: f64,
}

impl Default for DipoleField {
    fn default() -> Self {
        Self {
            b0: 29_404.8,
            pole_lat: 80.65,
            pole_lon: -72.68,
        }
    }
}

impl DipoleField {
    pub fn geomagnetic_latitude(&self, lat: f64, lon: f64) -> f64 {
        let (phi, phip) = (lat.to_radians(), self.pole_lat.to_radians());
        let dl = (lon - self.pole_lon).to_radians();
        let s = phi.sin() * phip.sin() + phi.cos() * phip.cos() * dl.cos();
        s.clamp(-1.0, 1.0).asin()
    }
}

impl MainFieldProvider for DipoleField {
    fn field_nt(&self, lat: f64, lon: f64) -> Result<f64> {
        if !(lat.abs() <= 90.0 && lon.is_finite()) {
            return Err(Error::ProviderDomain { lat, lon });
        }
        let s = self.geomagnetic_latitude(lat, lon).sin();
        Ok(self.b0 * (1.0 + 3.0 * s * s).sqrt())
    }
}

/// Externally computed main-field grid, sampled bilinearly between pixel centres.
#[derive(Debug, Clone)]
pub struct GridField(pub MagRaster);

impl MainFieldProvider for GridField {
    fn field_nt(&self, lat: f64, lon: f64) -> Result<f64> {
        let r = &self.0;
        let f = r.frame();
        let fx = (lon - f.origin_lon) / f.cell_dlon - 0.5;
        let fy = r.height() as f64 - 0.5 - (lat - f.origin_lat) / f.cell_dlat;
        let (wmax, hmax) = ((r.width() - 1) as f64, (r.height() - 1) as f64);
        // Half a pixel of slack at the border, where the nearest centre is used.
        if !(fx >= -0.5 && fy >= -0.5 && fx <= wmax + 0.5 && fy <= hmax + 0.5) {
            return Err(Error::ProviderDomain { lat, lon });
        }
        let (fx, fy) = (fx.clamp(0.0, wmax), fy.clamp(0.0, hmax));
        let (i0, j0) = (fx.floor() as usize, fy.floor() as usize);
        let (i1, j1) = ((i0 + 1).min(r.width() - 1), (j0 + 1).min(r.height() - 1));
        let (ax, ay) = (fx - i0 as f64, fy - j0 as f64);
        let px = |i, j| r.get(i, j).ok().flatten().ok_or(Error::ProviderDomain { lat, lon });
        let top = px(i0, j0)? * (1.0 - ax) + px(i1, j0)? * ax;
        let bottom = px(i0, j1)? * (1.0 - ax) + px(i1, j1)? * ax;
        Ok(top * (1.0 - ay) + bottom * ay)
    }
}

/// `B_main(lat, lon) + anomaly` at every pixel centre; the mask carries over.
pub fn total_field(anomaly: &MagRaster, main: &dyn MainFieldProvider) -> Result<MagRaster> {
    let mut values = anomaly.values().to_vec();
    for j in 0..anomaly.height() {
        for i in 0..anomaly.width() {
            let k = j * anomaly.width() + i;
            if anomaly.mask()[k] {
                continue;
            }
            let (lat, lon) = anomaly.pixel_latlon(i, j);
            values[k] += main.field_nt(lat, lon)?;
        }
    }
    let mut out = MagRaster::with_mask(
        anomaly.width(),
        anomaly.height(),
        anomaly.frame(),
        values,
        anomaly.mask().to_vec(),
        anomaly.nodata_value(),
    )?;
    let (hx, hy) = anomaly.spacing();
    out.hx = hx;
    out.hy = hy;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{GeoFrame, DEFAULT_NODATA};

    fn anomaly() -> MagRaster {
        let v: Vec<f64> = (0..20).map(|k| (k as f64 * 0.37).sin() * 300.0).collect();
        MagRaster::new(5, 4, GeoFrame::square(35.0, -100.0, 0.25), v, DEFAULT_NODATA).unwrap()
    }

    #[test]
    fn constant_plus_zero_anomaly() {
        let zero = anomaly().map_values(|_| 0.0);
        let t = total_field(&zero, &ConstantField(50_000.0)).unwrap();
        assert!(t.values().iter().all(|&v| v == 50_000.0));
    }

    #[test]
    fn zero_provider_is_identity() {
        let a = anomaly();
        assert_eq!(total_field(&a, &ZeroField).unwrap(), a);
    }

    #[test]
    fn total_field_is_additive() {
        let a = anomaly();
        let p = DipoleField::default();
        let full = total_field(&a, &p).unwrap();
        let base = total_field(&a.map_values(|_| 0.0), &p).unwrap();
        for ((f, b), x) in full.values().iter().zip(base.values()).zip(a.values()) {
            assert!((f - b - x).abs() <= 2.0 * f64::EPSILON * f.abs());
        }
    }

    #[test]
    fn mask_survives_total_field() {
        let mut v = vec![1.0; 9];
        v[4] = DEFAULT_NODATA;
        let a = MagRaster::new(3, 3, GeoFrame::square(0.0, 0.0, 0.1), v, DEFAULT_NODATA).unwrap();
        let t = total_field(&a, &ConstantField(5.0)).unwrap();
        assert_eq!(t.get(1, 1).unwrap(), None);
        assert_eq!(t.get(0, 0).unwrap(), Some(6.0));
    }

    #[test]
    fn dipole_matches_formula_and_grows_poleward() {
        let d = DipoleField::default();
        assert!((d.field_nt(d.pole_lat, d.pole_lon).unwrap() - 2.0 * d.b0).abs() < 1e-6);
        let lm = d.geomagnetic_latitude(40.0, -100.0);
        let want = d.b0 * (1.0 + 3.0 * lm.sin().powi(2)).sqrt();
        assert_eq!(d.field_nt(40.0, -100.0).unwrap(), want);
        let (south, north) = (d.field_nt(25.0, -100.0).unwrap(), d.field_nt(48.0, -100.0).unwrap());
        assert!(north > south);
        assert!(south > 40_000.0 && north < 60_000.0, "{south} {north}");
        assert!(d.field_nt(95.0, 0.0).is_err());
    }

    #[test]
    fn grid_provider_reproduces_pixels_and_interpolates() {
        let g = anomaly();
        let p = GridField(g.clone());
        for j in 0..4 {
            for i in 0..5 {
                let (lat, lon) = g.pixel_latlon(i, j);
                assert!((p.field_nt(lat, lon).unwrap() - g.get(i, j).unwrap().unwrap()).abs() < 1e-9);
            }
        }
        let (lat0, lon0) = g.pixel_latlon(1, 1);
        let (_, lon1) = g.pixel_latlon(2, 1);
        let mid = p.field_nt(lat0, 0.5 * (lon0 + lon1)).unwrap();
        let want = 0.5 * (g.get(1, 1).unwrap().unwrap() + g.get(2, 1).unwrap().unwrap());
        assert!((mid - want).abs() < 1e-9);
        assert!(matches!(p.field_nt(10.0, -100.0), Err(Error::ProviderDomain { .. })));
    }
}
