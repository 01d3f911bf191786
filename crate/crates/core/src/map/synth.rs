use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GeoFrame, MagRaster, DEFAULT_NODATA};
use crate::error::{Error, Result};

/// Parameters of a synthetic anomaly map built from Gaussian bumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    /// Bound on `|value|`, nT.
    pub amplitude: f64,
    /// Typical bump standard deviation, in pixels.
    pub correlation_length: f64,
    pub blob_count: usize,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub cell_deg: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            amplitude: 400.0,
            correlation_length: 4.0,
            blob_count: 600,
            origin_lat: 35.0,
            origin_lon: -100.0,
            cell_deg: 30.0 / 3600.0,
        }
    }
}

impl SynthSpec {
    /// Smooth, strong anomalies: about one 24-pixel bump per 1333 pixels with
    /// heights up to 2000 nT. Gradients stay coherent over strides of several
    /// pixels.
    pub fn high_contrast(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            amplitude: 2000.0,
            correlation_length: 24.0,
            blob_count: (width * height).div_ceil(1333),
            ..Self::default()
        }
    }
}

/// Sum of `blob_count` random Gaussian bumps, rescaled so that
/// `max |value| <= amplitude`.
///
/// Each bump has a centre uniform over the grid, a width of
/// `correlation_length * U(0.5, 1.5)` pixels and a signed height of up to
/// `amplitude`, and is truncated at four widths.
pub fn synth_map<R: Rng + ?Sized>(spec: &SynthSpec, rng: &mut R) -> Result<MagRaster> {
    let (w, h) = (spec.width, spec.height);
    if w < 4 || h < 4 {
        return Err(Error::InvalidParams(format!("synthetic map must be at least 4x4, got {w}x{h}")));
    }
    if !(spec.amplitude >= 0.0 && spec.correlation_length > 0.0 && spec.cell_deg > 0.0) {
        return Err(Error::InvalidParams(
            "amplitude must be non-negative, correlation length and cell size positive".into(),
        ));
    }
    let mut values = vec![0.0; w * h];
    for _ in 0..spec.blob_count {
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let sigma = spec.correlation_length * rng.random_range(0.5..1.5);
        let height = spec.amplitude * rng.random_range(-1.0..1.0);
        let reach = 4.0 * sigma;
        let i0 = (cx - reach).floor().max(0.0) as usize;
        let i1 = ((cx + reach).ceil() as usize).min(w - 1);
        let j0 = (cy - reach).floor().max(0.0) as usize;
        let j1 = ((cy + reach).ceil() as usize).min(h - 1);
        let inv = -0.5 / (sigma * sigma);
        for j in j0..=j1 {
            let dy = j as f64 - cy;
            let row = &mut values[j * w..(j + 1) * w];
            for (i, v) in row.iter_mut().enumerate().take(i1 + 1).skip(i0) {
                let dx = i as f64 - cx;
                let r2 = dx * dx + dy * dy;
                if r2 <= reach * reach {
                    *v += height * (r2 * inv).exp();
                }
            }
        }
    }
    let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > spec.amplitude {
        let s = spec.amplitude / peak;
        for v in &mut values {
            *v = (*v * s).clamp(-spec.amplitude, spec.amplitude);
        }
    }
    let frame = GeoFrame::square(spec.origin_lat, spec.origin_lon, spec.cell_deg);
    MagRaster::new(w, h, frame, values, DEFAULT_NODATA)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(blobs: usize) -> SynthSpec {
        SynthSpec {
            width: 40,
            height: 30,
            blob_count: blobs,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn no_blobs_no_field() {
        let r = synth_map(&small(0), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(r.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn seeded_maps_repeat() {
        let a = synth_map(&small(80), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = synth_map(&small(80), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let c = synth_map(&small(80), &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn amplitude_bound_holds() {
        for seed in 0..20 {
            let spec = SynthSpec {
                amplitude: 123.0,
                ..small(300)
            };
            let r = synth_map(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let peak = r.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(peak <= 123.0 && peak > 10.0, "seed {seed}: {peak}");
        }
    }

    #[test]
    fn tiny_map_rejected() {
        let spec = SynthSpec {
            width: 3,
            ..small(1)
        };
        assert!(synth_map(&spec, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
