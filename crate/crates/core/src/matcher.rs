//! Mahalanobis map matching in gradient space and corner space.
//!
//! A query is scored against every cell of a [`FeatureGrid`] with a
//! squared Mahalanobis distance, either on the `(gx, gy, dxy)` features or on
//! the raw corner values of an arbitrary subset of corners. The coarse-to-fine
//! search scans a strided lattice, keeps the best `seeds` cells, and rescans
//! the union of `window x window` boxes around them exactly, optionally with
//! a different metric.
//!
//! Ordering is total: candidates compare by `(d2, j, i)`, so ties resolve to
//! the smallest row-major index.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::FieldEstimate;
use crate::map::{apply_stencil, CornerVector, FeatureGrid, StencilMatrix};

/// Condition number above which a ridge is added before inversion.
pub const MAX_CONDITION: f64 = 1e12;

/// Default ridge as a fraction of `trace / dim`.
pub const DEFAULT_RIDGE_FRACTION: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Corner {
    LL,
    LR,
    UL,
    UR,
}

impl Corner {
    pub const ALL: [Corner; 4] = [Corner::LL, Corner::LR, Corner::UL, Corner::UR];

    /// Position in a `(LL, LR, UL, UR)` corner vector.
    pub fn index(self) -> usize {
        self as usize
    }

    /// The first `n` corners in canonical order.
    pub fn first(n: usize) -> &'static [Corner] {
        &Self::ALL[..n.min(4)]
    }
}

/// Field estimates at a subset of a cell's corners with their covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    corners: Vec<Corner>,
    b_hat: DVector<f64>,
    sigma_b: DMatrix<f64>,
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for r in 0..m.nrows() {
        for c in r + 1..m.ncols() {
            if (m[(r, c)] - m[(c, r)]).abs() > 1e-12 * scale {
                return Err(Error::AsymmetricCovariance(format!(
                    "entries ({r}, {c}) = {} and ({c}, {r}) = {} differ",
                    m[(r, c)],
                    m[(c, r)]
                )));
            }
        }
    }
    Ok(())
}

impl MeasurementSet {
    pub fn new(corners: Vec<Corner>, b_hat: Vec<f64>, sigma_b: DMatrix<f64>) -> Result<Self> {
        let s = corners.len();
        if s == 0 || s > 4 {
            return Err(Error::Contract(format!("measurement needs 1 to 4 corners, got {s}")));
        }
        let mut seen = [false; 4];
        for c in &corners {
            if std::mem::replace(&mut seen[c.index()], true) {
                return Err(Error::Contract(format!("corner {c:?} listed twice")));
            }
        }
        if b_hat.len() != s || sigma_b.nrows() != s || sigma_b.ncols() != s {
            return Err(Error::DimensionMismatch(format!(
                "{s} corners need {s} values and a {s}x{s} covariance, got {} and {}x{}",
                b_hat.len(),
                sigma_b.nrows(),
                sigma_b.ncols()
            )));
        }
        if b_hat.iter().chain(sigma_b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("measurement contains non-finite entries".into()));
        }
        check_symmetric(&sigma_b)?;
        if sigma_b.diagonal().iter().any(|&d| d <= 0.0) {
            return Err(Error::InvalidParams("covariance diagonal must be positive".into()));
        }
        let eig = SymmetricEigen::new(sigma_b.clone());
        let tol = 1e-12 * sigma_b.amax();
        if let Some(&neg) = eig.eigenvalues.iter().find(|&&l| l < -tol) {
            return Err(Error::InvalidParams(format!("covariance has negative eigenvalue {neg}")));
        }
        Ok(Self {
            corners,
            b_hat: DVector::from_vec(b_hat),
            sigma_b,
        })
    }

    /// Independent corners with standard deviations `sigma` (nT).
    pub fn diagonal(corners: Vec<Corner>, b_hat: Vec<f64>, sigma: &[f64]) -> Result<Self> {
        let var: Vec<f64> = sigma.iter().map(|s| s * s).collect();
        let cov = DMatrix::from_diagonal(&DVector::from_vec(var));
        Self::new(corners, b_hat, cov)
    }

    /// Measurement built from per-corner field estimates, diagonal covariance.
    pub fn from_estimates(corners: Vec<Corner>, estimates: &[FieldEstimate]) -> Result<Self> {
        let b: Vec<f64> = estimates.iter().map(FieldEstimate::b_hat_nt).collect();
        let s: Vec<f64> = estimates.iter().map(FieldEstimate::sigma_b_nt).collect();
        Self::diagonal(corners, b, &s)
    }

    /// Noise-free measurement of the given corners of a cell.
    pub fn planted(cell: CornerVector, corners: Vec<Corner>, sigma: f64) -> Result<Self> {
        let all = cell.to_array();
        let b = corners.iter().map(|c| all[c.index()]).collect();
        let s = vec![sigma; corners.len()];
        Self::diagonal(corners, b, &s)
    }

    pub fn corners(&self) -> &[Corner] {
        &self.corners
    }

    pub fn b_hat(&self) -> &DVector<f64> {
        &self.b_hat
    }

    pub fn sigma_b(&self) -> &DMatrix<f64> {
        &self.sigma_b
    }

    pub fn len(&self) -> usize {
        self.corners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corners.is_empty()
    }

    /// Values and covariance permuted into `(LL, LR, UL, UR)` order. Needs all four.
    pub fn full(&self) -> Result<(CornerVector, Matrix4<f64>)> {
        if self.len() != 4 {
            return Err(Error::Contract(format!(
                "gradient-space matching needs all 4 corners, measurement has {}",
                self.len()
            )));
        }
        let mut b = [0.0; 4];
        let mut cov = Matrix4::zeros();
        for (r, cr) in self.corners.iter().enumerate() {
            b[cr.index()] = self.b_hat[r];
            for (c, cc) in self.corners.iter().enumerate() {
                cov[(cr.index(), cc.index())] = self.sigma_b[(r, c)];
            }
        }
        Ok((CornerVector::from_array(b), cov))
    }

    /// `(T b_hat, T Sigma_b T^T)` with the spacing of the map under test.
    pub fn to_features(&self, grid: &FeatureGrid) -> Result<FeatureMeasurement> {
        let (b, cov) = self.full()?;
        let (hx, hy) = grid.spacing();
        Ok(FeatureMeasurement {
            z_hat: apply_stencil(hx, hy, &b).into(),
            sigma_z: propagate_cov(grid.stencil(), &cov)?,
        })
    }
}

/// Measured `(gx, gy, dxy)` with covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureMeasurement {
    pub z_hat: nalgebra::Vector3<f64>,
    pub sigma_z: Matrix3<f64>,
}

/// `T Sigma_b T^T`, symmetrised.
pub fn propagate_cov(t: &StencilMatrix, sigma_b: &Matrix4<f64>) -> Result<Matrix3<f64>> {
    check_symmetric(&DMatrix::from_column_slice(4, 4, sigma_b.as_slice()))?;
    let z = t * sigma_b * t.transpose();
    Ok((z + z.transpose()) * 0.5)
}

/// Inverse of a symmetric covariance, with a ridge of
/// `ridge_fraction * trace / dim` added when the condition number exceeds
/// [`MAX_CONDITION`].
pub fn regularized_inverse(sigma: &DMatrix<f64>, ridge_fraction: f64) -> Result<DMatrix<f64>> {
    if sigma.nrows() != sigma.ncols() || sigma.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "covariance must be square and non-empty, got {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    if !(ridge_fraction >= 0.0 && ridge_fraction.is_finite()) {
        return Err(Error::InvalidParams(format!("ridge fraction {ridge_fraction} must be non-negative")));
    }
    check_symmetric(sigma)?;
    let n = sigma.nrows();
    let sym = (sigma + sigma.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let cond = |e: &DVector<f64>| {
        let (lo, hi) = (e.min(), e.max());
        if lo > 0.0 {
            hi / lo
        } else {
            f64::INFINITY
        }
    };
    let mut values = eig.eigenvalues.clone();
    if cond(&values) > MAX_CONDITION {
        let ridge = ridge_fraction * sym.trace() / n as f64;
        values.add_scalar_mut(ridge);
        if !(values.min() > 0.0) {
            return Err(Error::SingularCovariance);
        }
    }
    let inv_diag = DMatrix::from_diagonal(&values.map(|l| 1.0 / l));
    let inv = &eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// `(z_hat - z)^T Sigma_z^-1 (z_hat - z)`.
pub fn dist_grad(z_hat: &[f64; 3], z_cell: &[f64; 3], sigma_z_inv: &[[f64; 3]; 3]) -> f64 {
    quad_form(z_hat, z_cell, sigma_z_inv, 3)
}

/// Corner-space distance over `b_hat.len()` corners.
pub fn dist_corner(b_hat: &[f64], b_cell: &[f64], sigma_b_inv: &DMatrix<f64>) -> f64 {
    let d = DVector::from_iterator(b_hat.len(), b_hat.iter().zip(b_cell).map(|(a, b)| a - b));
    (d.transpose() * sigma_b_inv * &d)[(0, 0)].max(0.0)
}

#[inline]
fn quad_form<const N: usize>(a: &[f64; N], b: &[f64; N], inv: &[[f64; N]; N], n: usize) -> f64 {
    let mut d = [0.0; N];
    for k in 0..n {
        d[k] = a[k] - b[k];
    }
    let mut acc = 0.0;
    for r in 0..n {
        let mut row = 0.0;
        for c in 0..n {
            row += inv[r][c] * d[c];
        }
        acc += d[r] * row;
    }
    acc.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Gradient,
    Corner,
}

/// Which metric drives the coarse pass and which the refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    Grad,
    Corner,
    GradCorner,
    CornerGrad,
}

impl Pipeline {
    pub fn stages(self) -> (Metric, Metric) {
        match self {
            Pipeline::Grad => (Metric::Gradient, Metric::Gradient),
            Pipeline::Corner => (Metric::Corner, Metric::Corner),
            Pipeline::GradCorner => (Metric::Gradient, Metric::Corner),
            Pipeline::CornerGrad => (Metric::Corner, Metric::Gradient),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Grad => "grad",
            Pipeline::Corner => "corner",
            Pipeline::GradCorner => "grad-corner",
            Pipeline::CornerGrad => "corner-grad",
        }
    }

    pub fn uses_gradient(self) -> bool {
        let (a, b) = self.stages();
        a == Metric::Gradient || b == Metric::Gradient
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grad" | "gradient" => Ok(Pipeline::Grad),
            "corner" => Ok(Pipeline::Corner),
            "grad-corner" => Ok(Pipeline::GradCorner),
            "corner-grad" => Ok(Pipeline::CornerGrad),
            _ => Err(Error::Config(format!(
                "unknown metric '{s}', expected grad, corner, grad-corner or corner-grad"
            ))),
        }
    }
}

/// Half-open rectangle of cell indices `[i0, i1) x [j0, j1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub i0: usize,
    pub j0: usize,
    pub i1: usize,
    pub j1: usize,
}

impl Roi {
    pub fn new(i0: usize, j0: usize, i1: usize, j1: usize) -> Self {
        Self { i0, j0, i1, j1 }
    }

    pub fn full(grid: &FeatureGrid) -> Self {
        Self::new(0, 0, grid.width(), grid.height())
    }

    /// Box of about `frac` of the grid area around `(ci, cj)`, shifted to stay inside.
    pub fn around(grid: &FeatureGrid, ci: usize, cj: usize, frac: f64) -> Result<Self> {
        if !(frac > 0.0 && frac <= 1.0) {
            return Err(Error::InvalidParams(format!("ROI fraction {frac} must lie in (0, 1]")));
        }
        let side = |n: usize| ((n as f64 * frac.sqrt()).round() as usize).clamp(1, n);
        let place = |c: usize, w: usize, n: usize| c.saturating_sub(w / 2).min(n - w);
        let (w, h) = (side(grid.width()), side(grid.height()));
        let (i0, j0) = (place(ci, w, grid.width()), place(cj, h, grid.height()));
        Ok(Self::new(i0, j0, i0 + w, j0 + h))
    }

    pub fn cols(&self) -> usize {
        self.i1.saturating_sub(self.i0)
    }

    pub fn rows(&self) -> usize {
        self.j1.saturating_sub(self.j0)
    }

    pub fn area(&self) -> usize {
        self.cols() * self.rows()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i >= self.i0 && i < self.i1 && j >= self.j0 && j < self.j1
    }

    fn check(&self, grid: &FeatureGrid) -> Result<()> {
        if self.area() == 0 || self.i1 > grid.width() || self.j1 > grid.height() {
            return Err(Error::InvalidParams(format!(
                "ROI [{}, {}) x [{}, {}) is empty or exceeds the {}x{} cell grid",
                self.i0,
                self.i1,
                self.j0,
                self.j1,
                grid.width(),
                grid.height()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchParams {
    pub stride: usize,
    pub seeds: usize,
    pub window: usize,
    pub pipeline: Pipeline,
    pub ridge_fraction: f64,
    pub top_k: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            stride: 25,
            seeds: 5,
            window: 51,
            pipeline: Pipeline::Grad,
            ridge_fraction: DEFAULT_RIDGE_FRACTION,
            top_k: 5,
        }
    }
}

impl SearchParams {
    pub fn validate(&self, roi: &Roi) -> Result<()> {
        if self.stride == 0 || self.seeds == 0 || self.top_k == 0 {
            return Err(Error::InvalidParams("stride, seeds and top_k must be at least 1".into()));
        }
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::InvalidParams(format!(
                "window must be odd and at least 3, got {}",
                self.window
            )));
        }
        if self.stride > roi.cols().min(roi.rows()) {
            return Err(Error::InvalidParams(format!(
                "stride {} exceeds the ROI's smaller side {}",
                self.stride,
                roi.cols().min(roi.rows())
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Candidate {
    pub i: usize,
    pub j: usize,
    pub d2: f64,
}

impl Candidate {
    fn cmp_key(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then(self.j.cmp(&other.j))
            .then(self.i.cmp(&other.i))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    pub cell: (usize, usize),
    pub d2_min: f64,
    pub top_k: Vec<Candidate>,
    pub coarse_evals: usize,
    pub refine_evals: usize,
    /// Wall-clock seconds spent in the scans, after query preparation.
    pub elapsed: f64,
}

/// A measurement prepared for one metric against one grid.
#[derive(Debug, Clone)]
pub enum Query {
    Gradient { z_hat: [f64; 3], inv: [[f64; 3]; 3] },
    Corner { idx: [usize; 4], s: usize, b_hat: [f64; 4], inv: [[f64; 4]; 4] },
}

impl Query {
    pub fn new(grid: &FeatureGrid, m: &MeasurementSet, metric: Metric, ridge_fraction: f64) -> Result<Self> {
        match metric {
            Metric::Gradient => {
                let f = m.to_features(grid)?;
                let sz = DMatrix::from_column_slice(3, 3, f.sigma_z.as_slice());
                let inv = regularized_inverse(&sz, ridge_fraction)?;
                let mut a = [[0.0; 3]; 3];
                for (r, row) in a.iter_mut().enumerate() {
                    for (c, v) in row.iter_mut().enumerate() {
                        *v = inv[(r, c)];
                    }
                }
                Ok(Query::Gradient {
                    z_hat: [f.z_hat[0], f.z_hat[1], f.z_hat[2]],
                    inv: a,
                })
            }
            Metric::Corner => {
                let s = m.len();
                let inv = regularized_inverse(m.sigma_b(), ridge_fraction)?;
                let (mut idx, mut b, mut a) = ([0; 4], [0.0; 4], [[0.0; 4]; 4]);
                for r in 0..s {
                    idx[r] = m.corners()[r].index();
                    b[r] = m.b_hat()[r];
                    for c in 0..s {
                        a[r][c] = inv[(r, c)];
                    }
                }
                Ok(Query::Corner { idx, s, b_hat: b, inv: a })
            }
        }
    }

    /// Distance to cell `k` (row-major cell index); the cell must be valid.
    #[inline]
    fn score(&self, grid: &FeatureGrid, k: usize) -> f64 {
        match self {
            Query::Gradient { z_hat, inv } => quad_form(z_hat, &grid.raw_features()[k], inv, 3),
            Query::Corner { idx, s, b_hat, inv } => {
                let c = &grid.raw_corners()[k];
                let mut cell = [0.0; 4];
                for r in 0..*s {
                    cell[r] = c[idx[r]];
                }
                quad_form(b_hat, &cell, inv, *s)
            }
        }
    }

    /// Distance to cell `(i, j)`, `None` when masked.
    pub fn distance(&self, grid: &FeatureGrid, i: usize, j: usize) -> Option<f64> {
        grid.is_valid(i, j).then(|| self.score(grid, grid.index(i, j)))
    }
}

/// Keeps the `k` smallest candidates in order.
struct TopK {
    k: usize,
    items: Vec<Candidate>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    #[inline]
    fn push(&mut self, c: Candidate) {
        if self.items.len() == self.k && c.cmp_key(&self.items[self.k - 1]) != Ordering::Less {
            return;
        }
        let at = self.items.partition_point(|x| x.cmp_key(&c) == Ordering::Less);
        self.items.insert(at, c);
        self.items.truncate(self.k);
    }
}

fn finish(top: TopK, coarse_evals: usize, refine_evals: usize, start: Instant) -> Result<MatchResult> {
    let best = *top.items.first().ok_or(Error::EmptyRoi)?;
    Ok(MatchResult {
        cell: (best.i, best.j),
        d2_min: best.d2,
        top_k: top.items,
        coarse_evals,
        refine_evals,
        elapsed: start.elapsed().as_secs_f64(),
    })
}

/// Global argmin over every valid cell of the ROI.
pub fn exhaustive_search(grid: &FeatureGrid, query: &Query, roi: &Roi, top_k: usize) -> Result<MatchResult> {
    roi.check(grid)?;
    let start = Instant::now();
    let mut top = TopK::new(top_k.max(1));
    let valid = grid.valid_mask();
    for j in roi.j0..roi.j1 {
        for i in roi.i0..roi.i1 {
            let k = grid.index(i, j);
            if valid[k] {
                top.push(Candidate {
                    i,
                    j,
                    d2: query.score(grid, k),
                });
            }
        }
    }
    finish(top, roi.area(), 0, start)
}

/// Strided scan, `seeds` best coarse cells, exact rescan of their windows.
///
/// `coarse` ranks the lattice and `fine` scores the refined region. Every
/// lattice position counts as a coarse evaluation and every distinct cell of
/// the refined region as a refine evaluation, masked or not.
pub fn coarse_to_fine(
    grid: &FeatureGrid,
    coarse: &Query,
    fine: &Query,
    roi: &Roi,
    params: &SearchParams,
) -> Result<MatchResult> {
    roi.check(grid)?;
    params.validate(roi)?;
    let start = Instant::now();
    let s = params.stride;
    let valid = grid.valid_mask();
    let mut lattice = Vec::with_capacity(roi.cols().div_ceil(s) * roi.rows().div_ceil(s));
    let mut coarse_evals = 0;
    for j in (roi.j0..roi.j1).step_by(s) {
        for i in (roi.i0..roi.i1).step_by(s) {
            coarse_evals += 1;
            let k = grid.index(i, j);
            if valid[k] {
                lattice.push(Candidate {
                    i,
                    j,
                    d2: coarse.score(grid, k),
                });
            }
        }
    }
    if lattice.is_empty() {
        return Err(Error::EmptyRoi);
    }
    let k0 = params.seeds.min(lattice.len());
    if k0 < lattice.len() {
        lattice.select_nth_unstable_by(k0 - 1, Candidate::cmp_key);
        lattice.truncate(k0);
    }
    lattice.sort_by(Candidate::cmp_key);

    let half = params.window / 2;
    let boxes: Vec<Roi> = lattice
        .iter()
        .map(|c| {
            Roi::new(
                c.i.saturating_sub(half).max(roi.i0),
                c.j.saturating_sub(half).max(roi.j0),
                (c.i + half + 1).min(roi.i1),
                (c.j + half + 1).min(roi.j1),
            )
        })
        .collect();
    let mut top = TopK::new(params.top_k);
    let mut refine_evals = 0;
    for (n, b) in boxes.iter().enumerate() {
        for j in b.j0..b.j1 {
            for i in b.i0..b.i1 {
                if boxes[..n].iter().any(|p| p.contains(i, j)) {
                    continue;
                }
                refine_evals += 1;
                let k = grid.index(i, j);
                if valid[k] {
                    top.push(Candidate {
                        i,
                        j,
                        d2: fine.score(grid, k),
                    });
                }
            }
        }
    }
    finish(top, coarse_evals, refine_evals, start)
}

/// Prepares both stages of `params.pipeline` and runs [`coarse_to_fine`].
pub fn two_metric_search(
    grid: &FeatureGrid,
    measurement: &MeasurementSet,
    roi: &Roi,
    params: &SearchParams,
) -> Result<MatchResult> {
    let (first, second) = params.pipeline.stages();
    let coarse = Query::new(grid, measurement, first, params.ridge_fraction)?;
    let fine = if second == first {
        coarse.clone()
    } else {
        Query::new(grid, measurement, second, params.ridge_fraction)?
    };
    coarse_to_fine(grid, &coarse, &fine, roi, params)
}

/// Planar distance in metres between the centres of two cells.
pub fn localization_error(grid: &FeatureGrid, a: (usize, usize), b: (usize, usize)) -> f64 {
    let (hx, hy) = grid.spacing();
    let di = a.0.abs_diff(b.0) as f64 * hx;
    let dj = a.1.abs_diff(b.1) as f64 * hy;
    di.hypot(dj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{feature_map, stencil, synth_map, MagRaster, SynthSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synth_grid(seed: u64, w: usize, h: usize) -> FeatureGrid {
        smooth_grid(seed, w, h, 3.0)
    }

    fn smooth_grid(seed: u64, w: usize, h: usize, corr: f64) -> FeatureGrid {
        let spec = SynthSpec {
            width: w,
            height: h,
            blob_count: (w * h) / (4.0 * corr * corr) as usize,
            correlation_length: corr,
            ..SynthSpec::default()
        };
        let r = synth_map(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        feature_map(&r.map_values(|v| v + 50_000.0)).unwrap()
    }

    fn planted(grid: &FeatureGrid, i: usize, j: usize, n: usize) -> MeasurementSet {
        MeasurementSet::planted(grid.corners(i, j).unwrap(), Corner::first(n).to_vec(), 1.0).unwrap()
    }

    fn dm(n: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(n, n, v)
    }

    #[test]
    fn white_corner_noise_maps_to_diag_1_1_4() {
        let t = stencil(1.0, 1.0).unwrap();
        let sz = propagate_cov(&t, &(Matrix4::identity() * 2.5)).unwrap();
        assert_eq!(sz, Matrix3::from_diagonal(&nalgebra::Vector3::new(2.5, 2.5, 10.0)));
        assert_eq!(propagate_cov(&t, &Matrix4::zeros()).unwrap(), Matrix3::zeros());
        let mut bad = Matrix4::identity();
        bad[(0, 1)] = 0.3;
        assert!(matches!(propagate_cov(&t, &bad), Err(Error::AsymmetricCovariance(_))));
    }

    #[test]
    fn gradient_distance_examples() {
        let z = [0.1, -0.2, 3e-5];
        let eye = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(dist_grad(&z, &z, &eye), 0.0);
        assert!((dist_grad(&[1.0, 2.0, 3.0], &[0.0, 0.0, 1.0], &eye) - 9.0).abs() < 1e-15);
        let inv = regularized_inverse(&dm(3, &[4.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]), 0.0).unwrap();
        let mut a = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                a[r][c] = inv[(r, c)];
            }
        }
        assert!((dist_grad(&[2.0, 0.0, 0.0], &[0.0; 3], &a) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn corner_distance_examples() {
        let one = dm(1, &[1.0]);
        assert!((dist_corner(&[5.0], &[2.0], &one) - 9.0).abs() < 1e-15);
        assert_eq!(dist_corner(&[5.0, 1.0], &[5.0, 1.0], &DMatrix::identity(2, 2)), 0.0);
        let var = [0.5, 2.0, 4.0];
        let inv = regularized_inverse(&DMatrix::from_diagonal(&DVector::from_row_slice(&var)), 0.0).unwrap();
        let (a, b) = ([1.0f64, 2.0, 3.0], [0.0f64, 0.0, -1.0]);
        let want: f64 = (0..3).map(|k| (a[k] - b[k]).powi(2) / var[k]).sum();
        assert!((dist_corner(&a, &b, &inv) - want).abs() < 1e-13);
    }

    #[test]
    fn regularization_rules() {
        let singular = dm(2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(regularized_inverse(&singular, 0.0), Err(Error::SingularCovariance)));
        let inv = regularized_inverse(&singular, 1e-9).unwrap();
        assert!(inv.iter().all(|v| v.is_finite()));
        assert!(matches!(regularized_inverse(&DMatrix::zeros(2, 2), 1e-9), Err(Error::SingularCovariance)));
        let fine = dm(2, &[2.0, 0.5, 0.5, 1.0]);
        let inv = regularized_inverse(&fine, 1e-3).unwrap();
        assert!((&fine * inv - DMatrix::identity(2, 2)).amax() < 1e-14);
        assert!(matches!(
            regularized_inverse(&dm(2, &[1.0, 0.2, 0.1, 1.0]), 0.0),
            Err(Error::AsymmetricCovariance(_))
        ));
    }

    #[test]
    fn measurement_contracts() {
        let eye = DMatrix::identity(2, 2);
        assert!(MeasurementSet::new(vec![], vec![], DMatrix::zeros(0, 0)).is_err());
        assert!(matches!(
            MeasurementSet::new(vec![Corner::LL, Corner::LL], vec![1.0, 2.0], eye.clone()),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            MeasurementSet::new(vec![Corner::LL, Corner::UR], vec![1.0], eye.clone()),
            Err(Error::DimensionMismatch(_))
        ));
        let m = MeasurementSet::new(vec![Corner::UR, Corner::LL], vec![1.0, 2.0], eye).unwrap();
        assert!(matches!(m.full(), Err(Error::Contract(_))));
        let m = MeasurementSet::diagonal(
            vec![Corner::UR, Corner::LL, Corner::UL, Corner::LR],
            vec![4.0, 1.0, 3.0, 2.0],
            &[0.4, 0.1, 0.3, 0.2],
        )
        .unwrap();
        let (b, cov) = m.full().unwrap();
        assert_eq!(b.to_array(), [1.0, 2.0, 3.0, 4.0]);
        assert!((cov[(3, 3)] - 0.16).abs() < 1e-15 && (cov[(0, 0)] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn planted_cell_found_exactly() {
        let g = synth_grid(3, 60, 50);
        for (metric, n) in [(Metric::Gradient, 4), (Metric::Corner, 4), (Metric::Corner, 1)] {
            let q = Query::new(&g, &planted(&g, 17, 23, n), metric, DEFAULT_RIDGE_FRACTION).unwrap();
            let r = exhaustive_search(&g, &q, &Roi::full(&g), 3).unwrap();
            assert_eq!(r.cell, (17, 23), "{metric:?} S={n}");
            assert_eq!(r.d2_min, 0.0);
            assert_eq!(r.top_k.len(), 3);
        }
    }

    #[test]
    fn ties_go_to_smallest_row_major_index() {
        let r = MagRaster::from_fn(6, 5, 1.0, 1.0, |i, j| if (i, j) == (4, 1) || (i, j) == (1, 3) { 9.0 } else { 0.0 }).unwrap();
        let g = feature_map(&r).unwrap();
        let m = MeasurementSet::diagonal(vec![Corner::UL], vec![9.0], &[1.0]).unwrap();
        let q = Query::new(&g, &m, Metric::Corner, 0.0).unwrap();
        let res = exhaustive_search(&g, &q, &Roi::full(&g), 4).unwrap();
        assert_eq!(res.cell, (4, 1));
        assert_eq!((res.top_k[1].i, res.top_k[1].j), (1, 3));
    }

    #[test]
    fn masked_roi_is_empty() {
        let mut v = vec![1.0; 9];
        v[4] = crate::map::DEFAULT_NODATA;
        let r = MagRaster::new(3, 3, crate::map::GeoFrame::square(0.0, 0.0, 0.01), v, crate::map::DEFAULT_NODATA).unwrap();
        let g = feature_map(&r).unwrap();
        let m = MeasurementSet::diagonal(vec![Corner::LL], vec![1.0], &[1.0]).unwrap();
        let q = Query::new(&g, &m, Metric::Corner, 0.0).unwrap();
        assert!(matches!(exhaustive_search(&g, &q, &Roi::full(&g), 1), Err(Error::EmptyRoi)));
    }

    #[test]
    fn params_validated() {
        let g = synth_grid(1, 20, 20);
        let roi = Roi::full(&g);
        let ok = SearchParams {
            stride: 4,
            window: 5,
            ..SearchParams::default()
        };
        assert!(ok.validate(&roi).is_ok());
        for bad in [
            SearchParams { window: 4, ..ok.clone() },
            SearchParams { window: 1, ..ok.clone() },
            SearchParams { stride: 0, ..ok.clone() },
            SearchParams { stride: 20, ..ok.clone() },
            SearchParams { seeds: 0, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(&roi), Err(Error::InvalidParams(_))), "{bad:?}");
        }
        let m = planted(&g, 3, 3, 2);
        let p = SearchParams {
            pipeline: Pipeline::GradCorner,
            ..ok
        };
        assert!(matches!(two_metric_search(&g, &m, &roi, &p), Err(Error::Contract(_))));
    }

    #[test]
    fn counters_follow_loop_structure() {
        let g = synth_grid(5, 101, 77);
        let m = planted(&g, 40, 30, 4);
        let roi = Roi::new(3, 5, 98, 70);
        for (stride, window, seeds) in [(1, 3, 1), (4, 9, 5), (7, 5, 3), (25, 51, 5)] {
            let p = SearchParams {
                stride,
                window,
                seeds,
                ..SearchParams::default()
            };
            let r = two_metric_search(&g, &m, &roi, &p).unwrap();
            assert_eq!(r.coarse_evals, roi.rows().div_ceil(stride) * roi.cols().div_ceil(stride));
            assert!(r.refine_evals <= window * window * seeds);
            assert!(r.refine_evals >= 1);
        }
    }

    #[test]
    fn stride_one_matches_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for seed in 0..8 {
            let g = synth_grid(seed, 70, 60);
            let b: Vec<f64> = (0..4).map(|_| 50_000.0 + rng.random_range(-300.0..300.0)).collect();
            let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
            let m = MeasurementSet::new(Corner::ALL.to_vec(), b, &a * a.transpose() + DMatrix::identity(4, 4) * 0.01).unwrap();
            for metric in [Metric::Gradient, Metric::Corner] {
                let q = Query::new(&g, &m, metric, DEFAULT_RIDGE_FRACTION).unwrap();
                let roi = Roi::full(&g);
                let p = SearchParams {
                    stride: 1,
                    seeds: 1 + seed as usize % 4,
                    window: 3,
                    ..SearchParams::default()
                };
                let ex = exhaustive_search(&g, &q, &roi, 1).unwrap();
                let cf = coarse_to_fine(&g, &q, &q, &roi, &p).unwrap();
                assert_eq!(ex.cell, cf.cell);
                assert_eq!(ex.d2_min, cf.d2_min);
            }
        }
    }

    #[test]
    fn every_pipeline_finds_a_noiseless_plant() {
        let spec = SynthSpec::high_contrast(120, 100);
        let r = synth_map(&spec, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let g = feature_map(&r.map_values(|v| v + 50_000.0)).unwrap();
        let m = planted(&g, 61, 47, 4);
        let roi = Roi::full(&g);
        for (pipeline, stride) in [(Pipeline::Grad, 8), (Pipeline::GradCorner, 8), (Pipeline::Corner, 1), (Pipeline::CornerGrad, 1)] {
            let p = SearchParams {
                stride,
                window: 2 * stride + 1,
                seeds: 5,
                pipeline,
                ..SearchParams::default()
            };
            let res = two_metric_search(&g, &m, &roi, &p).unwrap();
            assert_eq!(res.cell, (61, 47), "{pipeline}");
            assert_eq!(res.d2_min, 0.0);
        }
    }

    #[test]
    fn roi_around_stays_inside() {
        let g = synth_grid(2, 40, 30);
        let r = Roi::around(&g, 0, 28, 0.25).unwrap();
        assert_eq!((r.cols(), r.rows()), (20, 15));
        assert_eq!((r.i0, r.j1), (0, 29));
        assert_eq!(Roi::around(&g, 10, 10, 1.0).unwrap(), Roi::full(&g));
        assert!(Roi::around(&g, 1, 1, 0.0).is_err());
    }

    #[test]
    fn pipeline_names_round_trip() {
        for p in [Pipeline::Grad, Pipeline::Corner, Pipeline::GradCorner, Pipeline::CornerGrad] {
            assert_eq!(p.name().parse::<Pipeline>().unwrap(), p);
            assert_eq!(serde_json::to_string(&p).unwrap(), format!("\"{}\"", p.name()));
        }
        assert!(matches!("nearest".parse::<Pipeline>(), Err(Error::Config(_))));
    }

    fn psd(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
        prop::collection::vec(-2.0f64..2.0, n * n).prop_map(move |v| {
            let a = DMatrix::from_row_slice(n, n, &v);
            &a * a.transpose() + DMatrix::identity(n, n) * 1e-3
        })
    }

    proptest! {
        #[test]
        fn congruence_keeps_psd(a in prop::collection::vec(-3.0f64..3.0, 16), hx in 1.0f64..2000.0, hy in 1.0f64..2000.0) {
            let a = Matrix4::from_row_slice(&a);
            let sb = a * a.transpose();
            let t = stencil(hx, hy).unwrap();
            let sz = propagate_cov(&t, &sb).unwrap();
            let eig = sz.symmetric_eigenvalues();
            prop_assert!(eig.iter().all(|&l| l >= -1e-12 * sz.amax().max(1.0)));
            prop_assert!((sz - sz.transpose()).amax() == 0.0);
        }

        #[test]
        fn distance_is_nonnegative_and_reparameterisation_invariant(
            cov in psd(3),
            a in prop::collection::vec(-5.0f64..5.0, 3),
            b in prop::collection::vec(-5.0f64..5.0, 3),
            l in prop::collection::vec(-2.0f64..2.0, 9),
        ) {
            let inv = regularized_inverse(&cov, 0.0).unwrap();
            let d = dist_corner(&a, &b, &inv);
            prop_assert!(d >= 0.0);
            prop_assert_eq!(dist_corner(&a, &a, &inv), 0.0);
            let l = DMatrix::from_row_slice(3, 3, &l) + DMatrix::identity(3, 3) * 3.0;
            let (la, lb) = (&l * DVector::from_row_slice(&a), &l * DVector::from_row_slice(&b));
            let lcov = &l * &cov * l.transpose();
            let lcov = (&lcov + lcov.transpose()) * 0.5;
            let inv2 = regularized_inverse(&lcov, 0.0).unwrap();
            let d2 = dist_corner(la.as_slice(), lb.as_slice(), &inv2);
            prop_assert!((d - d2).abs() <= 1e-6 * d.max(1.0), "{} vs {}", d, d2);
        }
    }

    #[test]
    fn scaling_covariance_keeps_argmin() {
        let g = synth_grid(21, 80, 80);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b: Vec<f64> = (0..4).map(|_| 50_000.0 + rng.random_range(-200.0..200.0)).collect();
        let base = DMatrix::from_diagonal(&DVector::from_row_slice(&[3.0, 1.0, 2.0, 5.0]));
        for metric in [Metric::Gradient, Metric::Corner] {
            let cells: Vec<_> = [1e-3, 1.0, 7.3, 1e4]
                .iter()
                .map(|&c| {
                    let m = MeasurementSet::new(Corner::ALL.to_vec(), b.clone(), &base * c).unwrap();
                    let q = Query::new(&g, &m, metric, DEFAULT_RIDGE_FRACTION).unwrap();
                    exhaustive_search(&g, &q, &Roi::full(&g), 1).unwrap().cell
                })
                .collect();
            assert!(cells.windows(2).all(|w| w[0] == w[1]), "{metric:?} {cells:?}");
        }
    }
}
