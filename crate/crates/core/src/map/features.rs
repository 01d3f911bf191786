use nalgebra::{SMatrix, Vector3, Vector4};
use rayon::prelude::*;

use super::MagRaster;
use crate::error::{Error, Result};

/// Linear map from a cell's corner vector to its `(gx, gy, dxy)` features.
pub type StencilMatrix = SMatrix<f64, 3, 4>;

/// Field values at the four pixels of a cell, nanotesla.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerVector {
    pub b_ll: f64,
    pub b_lr: f64,
    pub b_ul: f64,
    pub b_ur: f64,
}

impl CornerVector {
    pub fn to_array(self) -> [f64; 4] {
        [self.b_ll, self.b_lr, self.b_ul, self.b_ur]
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::from(self.to_array())
    }

    pub fn from_array(b: [f64; 4]) -> Self {
        Self {
            b_ll: b[0],
            b_lr: b[1],
            b_ul: b[2],
            b_ur: b[3],
        }
    }
}

/// Finite-difference gradient and mixed second derivative over one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellFeature {
    /// Eastward derivative, nT/m.
    pub gx: f64,
    /// Northward derivative, nT/m.
    pub gy: f64,
    /// Mixed derivative, nT/m^2.
    pub dxy: f64,
}

impl CellFeature {
    pub fn to_array(self) -> [f64; 3] {
        [self.gx, self.gy, self.dxy]
    }

    pub fn from_vector(z: Vector3<f64>) -> Self {
        Self {
            gx: z[0],
            gy: z[1],
            dxy: z[2],
        }
    }

    pub fn gradient_magnitude(&self) -> f64 {
        self.gx.hypot(self.gy)
    }
}

/// Stencil for pixel spacing `hx`, `hy` (metres).
pub fn stencil(hx: f64, hy: f64) -> Result<StencilMatrix> {
    if !(hx > 0.0 && hy > 0.0 && hx.is_finite() && hy.is_finite()) {
        return Err(Error::InvalidParams(format!("spacing ({hx}, {hy}) must be positive")));
    }
    let (ax, ay, axy) = (1.0 / (2.0 * hx), 1.0 / (2.0 * hy), 1.0 / (hx * hy));
    #[rustfmt::skip]
    let t = StencilMatrix::new(
        -ax,   ax,  -ax,  ax,
        -ay,  -ay,   ay,  ay,
        axy, -axy, -axy, axy,
    );
    Ok(t)
}

/// `T * b` evaluated difference-first, so a constant offset cancels before
/// any rounding by the spacing factors.
pub(crate) fn apply_stencil(hx: f64, hy: f64, c: &CornerVector) -> [f64; 3] {
    let east = (c.b_lr - c.b_ll) + (c.b_ur - c.b_ul);
    let north = (c.b_ul - c.b_ll) + (c.b_ur - c.b_lr);
    let twist = (c.b_ll - c.b_lr) - (c.b_ul - c.b_ur);
    [east / (2.0 * hx), north / (2.0 * hy), twist / (hx * hy)]
}

/// Corners of cell `(i, j)` in `(LL, LR, UL, UR)` order.
pub fn cell_corners(raster: &MagRaster, i: usize, j: usize) -> Result<CornerVector> {
    let (w, h) = (raster.width(), raster.height());
    if i + 1 >= w || j + 1 >= h {
        return Err(Error::OutOfBounds {
            i,
            j,
            width: w.saturating_sub(1),
            height: h.saturating_sub(1),
        });
    }
    let px = |a: usize, b: usize| raster.get(a, b).ok().flatten().ok_or(Error::NodataCorner { i, j });
    Ok(CornerVector {
        b_ll: px(i, j + 1)?,
        b_lr: px(i + 1, j + 1)?,
        b_ul: px(i, j)?,
        b_ur: px(i + 1, j)?,
    })
}

/// Per-cell corners and features of a raster, `(width - 1) x (height - 1)` cells.
///
/// Cells touching a masked pixel are invalid; their entries are zero and
/// must not be read.
#[derive(Debug, Clone)]
pub struct FeatureGrid {
    width: usize,
    height: usize,
    hx: f64,
    hy: f64,
    t: StencilMatrix,
    corners: Vec<[f64; 4]>,
    features: Vec<[f64; 3]>,
    valid: Vec<bool>,
}

impl FeatureGrid {
    /// Number of cell columns.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of cell rows.
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn spacing(&self) -> (f64, f64) {
        (self.hx, self.hy)
    }

    pub fn stencil(&self) -> &StencilMatrix {
        &self.t
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        i < self.width && j < self.height && self.valid[self.index(i, j)]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn feature(&self, i: usize, j: usize) -> Option<CellFeature> {
        self.is_valid(i, j).then(|| {
            let z = self.features[self.index(i, j)];
            CellFeature {
                gx: z[0],
                gy: z[1],
                dxy: z[2],
            }
        })
    }

    pub fn corners(&self, i: usize, j: usize) -> Option<CornerVector> {
        self.is_valid(i, j).then(|| CornerVector::from_array(self.corners[self.index(i, j)]))
    }

    pub(crate) fn raw_features(&self) -> &[[f64; 3]] {
        &self.features
    }

    pub(crate) fn raw_corners(&self) -> &[[f64; 4]] {
        &self.corners
    }

    pub(crate) fn valid_mask(&self) -> &[bool] {
        &self.valid
    }
}

type CellRow = Vec<([f64; 4], [f64; 3], bool)>;

/// Features of every cell, rows computed in parallel.
pub fn feature_map(raster: &MagRaster) -> Result<FeatureGrid> {
    let (hx, hy) = raster.spacing();
    let t = stencil(hx, hy)?;
    let (w, h) = (raster.width().saturating_sub(1), raster.height().saturating_sub(1));
    let rows: Vec<CellRow> = (0..h)
        .into_par_iter()
        .map(|j| {
            (0..w)
                .map(|i| match cell_corners(raster, i, j) {
                    Ok(c) => (c.to_array(), apply_stencil(hx, hy, &c), true),
                    Err(_) => ([0.0; 4], [0.0; 3], false),
                })
                .collect()
        })
        .collect();
    let mut grid = FeatureGrid {
        width: w,
        height: h,
        hx,
        hy,
        t,
        corners: Vec::with_capacity(w * h),
        features: Vec::with_capacity(w * h),
        valid: Vec::with_capacity(w * h),
    };
    for (c, z, ok) in rows.into_iter().flatten() {
        grid.corners.push(c);
        grid.features.push(z);
        grid.valid.push(ok);
    }
    Ok(grid)
}

/// `sqrt(gx^2 + gy^2)` per cell in nT/m, `None` on masked cells. Row-major.
pub fn gradient_magnitude_map(grid: &FeatureGrid) -> Vec<Option<f64>> {
    grid.features
        .iter()
        .zip(&grid.valid)
        .map(|(z, &ok)| ok.then(|| z[0].hypot(z[1])))
        .collect()
}
