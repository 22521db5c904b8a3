//! Affine Coherent Point Drift.
//!
//! The moving (source) set supplies the centroids of an isotropic Gaussian
//! mixture, augmented by a uniform outlier component, that is fitted to the
//! fixed (target) set by expectation-maximisation. Each M-step solves the
//! affine parameters and the shared variance in closed form.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::AffineTransform;

use super::{subsample_keypoints, KeyPointSet};

const DIM: f64 = 2.0;
/// Variance floor in normalised units; below it the fit is exact for all
/// practical purposes.
const SIGMA2_FLOOR: f64 = 1e-12;
/// Posterior terms smaller than `exp(-EXP_CUTOFF)` relative to the row's
/// largest term are below double-precision resolution and are dropped.
const EXP_CUTOFF: f64 = 40.0;
/// `exp(-x)` for `x` in `[0, EXP_CUTOFF]`, within a few ulp of
/// [`f64::exp`]. Branch-free and call-free so the E-step row loop
/// vectorises; the row loop spends most of its time here.
#[inline(always)]
fn exp_neg(x: f64) -> f64 {
    // adding 1.5·2^52 rounds to an integer held in the low mantissa bits
    const SHIFTER: f64 = 6755399441055744.0;
    // ln 2 split so that k·LN2_HI is exact for |k| < 2^11
    const LN2_HI: f64 = f64::from_bits(0x3fe6_2e42_fee0_0000);
    const LN2_LO: f64 = f64::from_bits(0x3dea_39ef_3579_3c76);
    // 1/k! for k = 13 down to 2
    const TAYLOR: [f64; 12] = [
        1.0 / 6_227_020_800.0,
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
    ];
    let shifted = -x * std::f64::consts::LOG2_E + SHIFTER;
    let k = shifted - SHIFTER;
    let r = (-x - k * LN2_HI) - k * LN2_LO;
    let mut p = TAYLOR[0];
    for c in &TAYLOR[1..] {
        p = p * r + c;
    }
    let p = (p * r + 1.0) * r + 1.0;
    // 2^k from the integer in the low bits; k >= -58 keeps it normal
    let pow2 = f64::from_bits((shifted.to_bits().wrapping_add(1023)) << 52);
    p * pow2
}

/// Relative determinant below which a 2x2 second-moment matrix is singular.
const SINGULAR_REL_DET: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpdParams {
    /// Weight of the uniform outlier component, in `[0, 1)`.
    pub outlier_weight: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the relative change of the objective.
    pub tolerance: f64,
    /// Subsampling cap applied to each point set.
    pub max_points: usize,
}

impl Default for CpdParams {
    fn default() -> Self {
        Self {
            outlier_weight: 0.1,
            max_iterations: 150,
            tolerance: 1e-8,
            max_points: 800,
        }
    }
}

impl CpdParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.outlier_weight) {
            return Err(Error::InvalidConfig(format!(
                "outlier weight {} outside [0, 1)",
                self.outlier_weight
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig("tolerance must be positive".into()));
        }
        if self.max_points < 10 {
            return Err(Error::InvalidConfig("max_points must be at least 10".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpdIteration {
    pub iteration: usize,
    /// Negative log-likelihood of the target set under the current mixture.
    pub objective: f64,
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpdDiagnostics {
    pub iterations: usize,
    /// Final variance, in the original pixel units.
    pub sigma2: f64,
    pub objective: f64,
    pub converged: bool,
    /// Objective and variance (normalised units) before each M-step.
    pub history: Vec<CpdIteration>,
}

impl CpdDiagnostics {
    /// CSV with columns `iter,objective,sigma2`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iter,objective,sigma2")?;
        for it in &self.history {
            writeln!(out, "{},{},{}", it.iteration, it.objective, it.sigma2)?;
        }
        Ok(())
    }
}

/// Centre and unit-RMS scale of a point set.
#[derive(Debug, Clone, Copy)]
struct Normalization {
    mean: [f64; 2],
    scale: f64,
}

impl Normalization {
    fn fit(points: &[[f64; 2]]) -> Result<Self> {
        let n = points.len() as f64;
        let mut mean = [0.0; 2];
        for p in points {
            mean[0] += p[0];
            mean[1] += p[1];
        }
        mean[0] /= n;
        mean[1] /= n;
        let ms = points
            .iter()
            .map(|p| (p[0] - mean[0]).powi(2) + (p[1] - mean[1]).powi(2))
            .sum::<f64>()
            / n;
        let scale = ms.sqrt();
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::DegenerateGeometry("all points coincide".into()));
        }
        Ok(Self { mean, scale })
    }

    fn apply(&self, points: &[[f64; 2]]) -> Vec<[f64; 2]> {
        points
            .iter()
            .map(|p| [(p[0] - self.mean[0]) / self.scale, (p[1] - self.mean[1]) / self.scale])
            .collect()
    }
}

type Mat2 = [[f64; 2]; 2];

fn det2(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

fn is_singular(m: &Mat2) -> bool {
    let tr = m[0][0] + m[1][1];
    let det = det2(m);
    !(det.is_finite() && tr > 0.0 && det > SINGULAR_REL_DET * tr * tr)
}

/// Second moment about the centroid, used to reject collinear inputs.
fn scatter(points: &[[f64; 2]]) -> Mat2 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let mut s = [[0.0; 2]; 2];
    for p in points {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        s[0][0] += dx * dx;
        s[0][1] += dx * dy;
        s[1][1] += dy * dy;
    }
    s[1][0] = s[0][1];
    s
}

/// Sufficient statistics of one E-step.
struct Expectation {
    objective: f64,
    /// Σ_n P(m|x_n), per source point.
    p1: Vec<f64>,
    /// Σ_m P(m|x_n), per target point.
    pt1: Vec<f64>,
    /// Σ_n P(m|x_n) x_n, per source point.
    px: Vec<[f64; 2]>,
}

/// Uniform bucket grid over the moving points, used to find the few
/// centroids that survive the `EXP_CUTOFF` test once σ² is small.
struct Grid {
    origin: [f64; 2],
    cell: f64,
    cols: usize,
    rows: usize,
    /// Cell `c` holds `items[starts[c]..starts[c + 1]]`.
    starts: Vec<usize>,
    items: Vec<u32>,
}

/// Cap on grid cells per side.
const MAX_GRID_SIDE: usize = 256;
/// Grid cells per cutoff radius.
const CELLS_PER_RADIUS: f64 = 2.0;
/// The grid is only built when the point cloud spans at least this many
/// cutoff radii.
const MIN_GRID_SPAN: f64 = 3.0;
/// Rings searched for the nearest centroid before falling back to a full scan.
const MAX_NEAREST_RING: isize = 6;

impl Grid {
    fn build(xs: &[f64], ys: &[f64], sigma2: f64) -> Option<Self> {
        let fold = |v: &[f64]| v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        let ((x0, x1), (y0, y1)) = (fold(xs), fold(ys));
        let extent = (x1 - x0).max(y1 - y0);
        let radius = (2.0 * EXP_CUTOFF * sigma2).sqrt();
        if !(radius > 0.0 && extent.is_finite()) || MIN_GRID_SPAN * radius >= extent {
            return None;
        }
        let cell = (radius / CELLS_PER_RADIUS).max(extent / (MAX_GRID_SIDE - 1) as f64);
        let cols = ((x1 - x0) / cell) as usize + 1;
        let rows = ((y1 - y0) / cell) as usize + 1;
        let cell_of = |i: usize| {
            let cx = (((xs[i] - x0) / cell) as usize).min(cols - 1);
            let cy = (((ys[i] - y0) / cell) as usize).min(rows - 1);
            cy * cols + cx
        };
        let mut starts = vec![0usize; cols * rows + 1];
        for i in 0..xs.len() {
            starts[cell_of(i) + 1] += 1;
        }
        for c in 0..cols * rows {
            starts[c + 1] += starts[c];
        }
        let mut fill = starts.clone();
        let mut items = vec![0u32; xs.len()];
        for i in 0..xs.len() {
            let c = cell_of(i);
            items[fill[c]] = i as u32;
            fill[c] += 1;
        }
        Some(Self {
            origin: [x0, y0],
            cell,
            cols,
            rows,
            starts,
            items,
        })
    }

    fn cell_items(&self, gx: isize, gy: isize) -> &[u32] {
        if gx < 0 || gy < 0 || gx >= self.cols as isize || gy >= self.rows as isize {
            return &[];
        }
        let c = gy as usize * self.cols + gx as usize;
        &self.items[self.starts[c]..self.starts[c + 1]]
    }

    /// Calls `f` with every point in the cells at Chebyshev distance `ring`
    /// from `(cx, cy)`.
    fn visit_ring(&self, cx: isize, cy: isize, ring: isize, mut f: impl FnMut(u32)) {
        for gy in cy - ring..=cy + ring {
            if (gy - cy).abs() == ring {
                for gx in cx - ring..=cx + ring {
                    self.cell_items(gx, gy).iter().for_each(|&i| f(i));
                }
            } else {
                self.cell_items(cx - ring, gy).iter().for_each(|&i| f(i));
                if ring > 0 {
                    self.cell_items(cx + ring, gy).iter().for_each(|&i| f(i));
                }
            }
        }
    }

    /// Squared distance from `xn` to its nearest centroid, found by an
    /// expanding ring search, or `None` past [`MAX_NEAREST_RING`].
    fn nearest(&self, xn: &[f64; 2], d2: impl Fn(u32) -> f64) -> Option<f64> {
        let limit = self.cols.max(self.rows) as isize + MAX_NEAREST_RING;
        // clamping keeps far-away targets far from every occupied cell
        let cx = (((xn[0] - self.origin[0]) / self.cell).floor() as isize).clamp(-limit, limit);
        let cy = (((xn[1] - self.origin[1]) / self.cell).floor() as isize).clamp(-limit, limit);
        let mut nearest = f64::INFINITY;
        for ring in 0..=MAX_NEAREST_RING {
            self.visit_ring(cx, cy, ring, |i| nearest = nearest.min(d2(i)));
            // points outside rings 0..=ring are more than ring cells away
            let reach = ring as f64 * self.cell;
            if nearest <= reach * reach {
                return Some(nearest);
            }
        }
        None
    }

    /// Inclusive cell range covering `[lo, hi]` along an axis with `len`
    /// cells, or `None` if it misses the grid.
    fn span(&self, lo: f64, hi: f64, origin: f64, len: usize) -> Option<(usize, usize)> {
        let a = ((lo - origin) / self.cell).floor().max(0.0);
        let b = ((hi - origin) / self.cell).floor().min((len - 1) as f64);
        (a <= b).then_some((a as usize, b as usize))
    }

    /// Fills `out` with an ascending superset of the centroids whose term
    /// passes the cutoff for target point `xn`, or returns `false` if the
    /// grid would not prune enough to pay off.
    ///
    /// `hint` is a centroid believed to be near `xn`; any centroid gives a
    /// valid bound. It is replaced by the nearest centroid found.
    #[allow(clippy::too_many_arguments)]
    fn candidates(
        &self,
        xn: &[f64; 2],
        xs: &[f64],
        ys: &[f64],
        sigma2: f64,
        hint: &mut u32,
        bits: &mut [u64],
        out: &mut Vec<u32>,
    ) -> bool {
        let d2 = |i: u32| {
            let (dx, dy) = (xn[0] - xs[i as usize], xn[1] - ys[i as usize]);
            dx * dx + dy * dy
        };
        let bound = if (*hint as usize) < xs.len() {
            d2(*hint)
        } else {
            match self.nearest(xn, d2) {
                Some(d) => d,
                None => return false,
            }
        };
        let radius2 = (bound + 2.0 * EXP_CUTOFF * sigma2) * (1.0 + 1e-9);
        let reach = radius2.sqrt() * (1.0 + 1e-9);
        let cols = self.span(xn[0] - reach, xn[0] + reach, self.origin[0], self.cols);
        let rows = self.span(xn[1] - reach, xn[1] + reach, self.origin[1], self.rows);
        let (Some((gx0, gx1)), Some((gy0, gy1))) = (cols, rows) else {
            return false;
        };
        if 2 * (gx1 - gx0 + 1) * (gy1 - gy0 + 1) > self.cols * self.rows {
            return false;
        }
        bits.fill(0);
        let mut best = (f64::INFINITY, u32::MAX);
        for gy in gy0..=gy1 {
            // the cells of one grid row are contiguous in `items`
            let row = gy * self.cols;
            for &i in &self.items[self.starts[row + gx0]..self.starts[row + gx1 + 1]] {
                let d = d2(i);
                if d <= radius2 {
                    bits[i as usize / 64] |= 1 << (i % 64);
                    if d < best.0 {
                        best = (d, i);
                    }
                }
            }
        }
        *hint = best.1;
        out.clear();
        for (w, &word) in bits.iter().enumerate() {
            let mut word = word;
            while word != 0 {
                out.push((w * 64) as u32 + word.trailing_zeros());
                word &= word - 1;
            }
        }
        true
    }
}

/// Reusable buffers for [`expectation`].
struct Scratch {
    xs: Vec<f64>,
    ys: Vec<f64>,
    dist: Vec<f64>,
    bits: Vec<u64>,
    candidates: Vec<u32>,
    /// Nearest centroid of each target point in the previous grid E-step.
    hints: Vec<u32>,
}

impl Scratch {
    fn new(m: usize, n: usize) -> Self {
        Self {
            xs: vec![0.0; m],
            ys: vec![0.0; m],
            dist: vec![0.0; m],
            bits: vec![0; m.div_ceil(64)],
            candidates: Vec::with_capacity(m),
            hints: vec![u32::MAX; n],
        }
    }
}

/// Running sums of one E-step.
struct Accumulator<'a> {
    xs: &'a [f64],
    ys: &'a [f64],
    inv_two_s2: f64,
    ln_c: f64,
    ln_norm: f64,
    objective: f64,
    p1: Vec<f64>,
    pt1: Vec<f64>,
    px: Vec<[f64; 2]>,
}

impl Accumulator<'_> {
    /// Adds target row `n` using the centroids `idx(0)..idx(len)`, which
    /// must be ascending and include every centroid passing the cutoff.
    #[inline(always)]
    fn row(&mut self, n: usize, xn: &[f64; 2], len: usize, idx: impl Fn(usize) -> usize, dist: &mut [f64]) {
        let dist = &mut dist[..len];
        // reductions get their own passes so the elementwise ones vectorise
        for (k, d) in dist.iter_mut().enumerate() {
            let i = idx(k);
            let dx = xn[0] - self.xs[i];
            let dy = xn[1] - self.ys[i];
            *d = (dx * dx + dy * dy) * self.inv_two_s2;
        }
        let dmin = dist.iter().fold(f64::INFINITY, |a, &d| a.min(d));
        for d in dist.iter_mut() {
            let e = *d - dmin;
            *d = if e < EXP_CUTOFF { exp_neg(e) } else { 0.0 };
        }
        let sum: f64 = dist.iter().fold(0.0, |a, &d| a + d);
        // log(Σ_m exp(-d_m) + c), evaluated without underflow
        let lse = -dmin + sum.ln();
        let log_den = if self.ln_c > lse {
            self.ln_c + (lse - self.ln_c).exp().ln_1p()
        } else {
            lse + (self.ln_c - lse).exp().ln_1p()
        };
        self.objective -= self.ln_norm + log_den;
        let scale = (-dmin - log_den).exp();
        if scale == 0.0 {
            return;
        }
        let mut total = 0.0;
        // cut-off terms add exact zeros
        for (k, &e) in dist.iter().enumerate() {
            let i = idx(k);
            let post = e * scale;
            self.p1[i] += post;
            self.px[i][0] += post * xn[0];
            self.px[i][1] += post * xn[1];
            total += post;
        }
        self.pt1[n] = total;
    }
}

/// One E-step. Each target row only visits centroids that can pass the
/// cutoff, so the result does not depend on whether the grid is used.
fn expectation(
    target: &[[f64; 2]],
    moved: &[[f64; 2]],
    sigma2: f64,
    outlier_weight: f64,
    scratch: &mut Scratch,
    use_grid: bool,
) -> Expectation {
    let m = moved.len();
    let n = target.len();
    let Scratch {
        xs,
        ys,
        dist,
        bits,
        candidates,
        hints,
    } = scratch;
    for ((x, y), p) in xs.iter_mut().zip(ys.iter_mut()).zip(moved) {
        *x = p[0];
        *y = p[1];
    }
    let grid = if use_grid { Grid::build(xs, ys, sigma2) } else { None };
    // Uniform term folded into the posterior denominator.
    let ln_c = if outlier_weight > 0.0 {
        (2.0 * PI * sigma2 * outlier_weight / (1.0 - outlier_weight) * m as f64 / n as f64).ln()
    } else {
        f64::NEG_INFINITY
    };
    let mut acc = Accumulator {
        xs,
        ys,
        inv_two_s2: 1.0 / (2.0 * sigma2),
        ln_c,
        ln_norm: ((1.0 - outlier_weight) / (m as f64 * 2.0 * PI * sigma2)).ln(),
        objective: 0.0,
        p1: vec![0.0; m],
        pt1: vec![0.0; n],
        px: vec![[0.0; 2]; m],
    };
    hints.resize(n, u32::MAX);
    for ((row, xn), hint) in target.iter().enumerate().zip(hints.iter_mut()) {
        match &grid {
            Some(g) if g.candidates(xn, acc.xs, acc.ys, sigma2, hint, bits, candidates) => {
                acc.row(row, xn, candidates.len(), |k| candidates[k] as usize, dist)
            }
            _ => acc.row(row, xn, m, |k| k, dist),
        }
    }
    Expectation {
        objective: acc.objective,
        p1: acc.p1,
        pt1: acc.pt1,
        px: acc.px,
    }
}

/// Closed-form affine M-step; returns `(B, t, sigma2)`.
fn maximization(
    target: &[[f64; 2]],
    source: &[[f64; 2]],
    e: &Expectation,
) -> Result<(Mat2, [f64; 2], f64)> {
    let np: f64 = e.p1.iter().sum();
    if !(np > 0.0) {
        return Err(Error::DegenerateGeometry("no target point is explained by the mixture".into()));
    }
    let mut mu_x = [0.0; 2];
    for (x, &w) in target.iter().zip(&e.pt1) {
        mu_x[0] += w * x[0];
        mu_x[1] += w * x[1];
    }
    let mut mu_y = [0.0; 2];
    for (y, &w) in source.iter().zip(&e.p1) {
        mu_y[0] += w * y[0];
        mu_y[1] += w * y[1];
    }
    for v in mu_x.iter_mut().chain(mu_y.iter_mut()) {
        *v /= np;
    }

    // A = X̂ᵀ Pᵀ Ŷ,  Q = Ŷᵀ d(P1) Ŷ
    let mut a = [[0.0; 2]; 2];
    let mut q = [[0.0; 2]; 2];
    for ((y, px), &w) in source.iter().zip(&e.px).zip(&e.p1) {
        for i in 0..2 {
            for j in 0..2 {
                a[i][j] += px[i] * y[j];
                q[i][j] += w * y[i] * y[j];
            }
        }
    }
    for i in 0..2 {
        for j in 0..2 {
            a[i][j] -= np * mu_x[i] * mu_y[j];
            q[i][j] -= np * mu_y[i] * mu_y[j];
        }
    }
    if is_singular(&q) {
        return Err(Error::DegenerateGeometry(
            "weighted source scatter is singular".into(),
        ));
    }
    let dq = det2(&q);
    let q_inv = [[q[1][1] / dq, -q[0][1] / dq], [-q[1][0] / dq, q[0][0] / dq]];
    let mut b = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            b[i][j] = a[i][0] * q_inv[0][j] + a[i][1] * q_inv[1][j];
        }
    }
    let t = [
        mu_x[0] - (b[0][0] * mu_y[0] + b[0][1] * mu_y[1]),
        mu_x[1] - (b[1][0] * mu_y[0] + b[1][1] * mu_y[1]),
    ];

    let mut xpx = 0.0;
    for (x, &w) in target.iter().zip(&e.pt1) {
        xpx += w * (x[0] * x[0] + x[1] * x[1]);
    }
    xpx -= np * (mu_x[0] * mu_x[0] + mu_x[1] * mu_x[1]);
    let tr_ab = a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1];
    let sigma2 = (xpx - tr_ab) / (np * DIM);
    Ok((b, t, sigma2))
}

/// Registers `source` onto `target`. The returned transform maps source
/// coordinates into the target frame.
pub fn cpd_affine(
    source: &KeyPointSet,
    target: &KeyPointSet,
    params: &CpdParams,
) -> Result<(AffineTransform, CpdDiagnostics)> {
    params.validate()?;
    if source.len() < 3 || target.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "need at least 3 points per set, got {} and {}",
            source.len(),
            target.len()
        )));
    }
    let source = subsample_keypoints(source, params.max_points, 0);
    let target = subsample_keypoints(target, params.max_points, 0);

    let norm_y = Normalization::fit(source.points())?;
    let norm_x = Normalization::fit(target.points())?;
    let y = norm_y.apply(source.points());
    let x = norm_x.apply(target.points());
    if is_singular(&scatter(&y)) {
        return Err(Error::DegenerateGeometry("source points are collinear".into()));
    }

    let (m, n) = (y.len(), x.len());
    let mut b: Mat2 = [[1.0, 0.0], [0.0, 1.0]];
    let mut t = [0.0; 2];
    let (sx, sy) = x.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p[0], acc.1 + p[1]));
    let (tx, ty) = y.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p[0], acc.1 + p[1]));
    let xx: f64 = x.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum();
    let yy: f64 = y.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum();
    let mut sigma2 =
        (m as f64 * xx + n as f64 * yy - 2.0 * (sx * tx + sy * ty)) / (DIM * m as f64 * n as f64);

    let mut history = Vec::new();
    let mut scratch = Scratch::new(m, n);
    let mut moved = vec![[0.0; 2]; m];
    let mut previous: Option<f64> = None;
    let mut converged = false;
    let mut objective = f64::NAN;
    for iteration in 1..=params.max_iterations {
        for (mv, p) in moved.iter_mut().zip(&y) {
            *mv = [
                b[0][0] * p[0] + b[0][1] * p[1] + t[0],
                b[1][0] * p[0] + b[1][1] * p[1] + t[1],
            ];
        }
        let e = expectation(&x, &moved, sigma2, params.outlier_weight, &mut scratch, true);
        if !e.objective.is_finite() {
            return Err(Error::NonFinite { iteration });
        }
        objective = e.objective;
        history.push(CpdIteration {
            iteration,
            objective,
            sigma2,
        });
        if let Some(prev) = previous {
            if (prev - objective).abs() <= params.tolerance * prev.abs() {
                converged = true;
                break;
            }
        }
        previous = Some(objective);

        let (nb, nt, ns2) = maximization(&x, &y, &e)?;
        if !(nb.iter().flatten().all(|v| v.is_finite()) && nt.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite { iteration });
        }
        b = nb;
        t = nt;
        if !(ns2 > SIGMA2_FLOOR) {
            // exact fit: the mixture has collapsed onto the target
            sigma2 = SIGMA2_FLOOR;
            converged = true;
            break;
        }
        sigma2 = ns2;
    }

    // Undo the normalisation: x = sx·(B·(y − my)/sy + t) + mx.
    let ratio = norm_x.scale / norm_y.scale;
    let linear = [
        [ratio * b[0][0], ratio * b[0][1]],
        [ratio * b[1][0], ratio * b[1][1]],
    ];
    let my = norm_y.mean;
    let translation = [
        norm_x.scale * t[0] + norm_x.mean[0] - (linear[0][0] * my[0] + linear[0][1] * my[1]),
        norm_x.scale * t[1] + norm_x.mean[1] - (linear[1][0] * my[0] + linear[1][1] * my[1]),
    ];
    let xform = AffineTransform::new(linear, translation);
    if !xform.is_finite() {
        return Err(Error::NonFinite { iteration: history.len() });
    }
    Ok((
        xform,
        CpdDiagnostics {
            iterations: history.len(),
            sigma2: sigma2 * norm_x.scale * norm_x.scale,
            objective,
            converged,
            history,
        },
    ))
}
