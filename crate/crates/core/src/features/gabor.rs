//! Complex Gabor filter bank and the per-pixel dominant-orientation field.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

use super::BinMap;

/// Response magnitudes below this are treated as exactly zero, so that flat
/// regions resolve to the tie-break instead of floating-point noise.
pub const MAGNITUDE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaborParams {
    pub num_scales: usize,
    pub num_orientations: usize,
    /// Carrier wavelength per scale, in pixels.
    pub wavelengths: Vec<f64>,
    /// Gaussian standard deviation as a multiple of the wavelength.
    pub sigma_ratio: f64,
    /// Spatial aspect ratio of the elliptical envelope.
    pub aspect_ratio: f64,
}

impl Default for GaborParams {
    fn default() -> Self {
        Self {
            num_scales: 4,
            num_orientations: 16,
            wavelengths: vec![4.0, 8.0, 12.0, 16.0],
            sigma_ratio: 0.56,
            aspect_ratio: 0.5,
        }
    }
}

impl GaborParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("gabor: {m}")));
        if self.num_scales == 0 || self.num_orientations == 0 {
            return bad("need at least one scale and one orientation");
        }
        if self.num_orientations > 256 {
            return bad("at most 256 orientations");
        }
        if self.wavelengths.len() != self.num_scales {
            return bad("one wavelength per scale");
        }
        if self.wavelengths.iter().any(|l| !(l.is_finite() && *l > 0.0))
            || self.wavelengths.windows(2).any(|w| w[1] <= w[0])
        {
            return bad("wavelengths must be positive and strictly increasing");
        }
        if !(self.sigma_ratio > 0.0 && self.sigma_ratio.is_finite()) {
            return bad("sigma_ratio must be positive");
        }
        if !(self.aspect_ratio > 0.0 && self.aspect_ratio.is_finite()) {
            return bad("aspect_ratio must be positive");
        }
        Ok(())
    }

    /// Orientation of index `r`: `θ_r = 2πr / num_orientations` (rπ/8 for 16).
    pub fn theta(&self, r: usize) -> f64 {
        2.0 * PI * r as f64 / self.num_orientations as f64
    }
}

/// One complex kernel on a `(2·radius+1)²` support, row-major, rows growing
/// downward.
#[derive(Debug, Clone, PartialEq)]
pub struct GaborFilter {
    pub scale: usize,
    pub orientation: usize,
    pub wavelength: f64,
    pub theta: f64,
    pub sigma: f64,
    pub radius: usize,
    pub kernel: Vec<Complex64>,
    /// Index of a filter whose kernel is this one's complex conjugate. A real
    /// image has the same response magnitude under both.
    pub conjugate_of: Option<usize>,
}

impl GaborFilter {
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    #[inline]
    pub fn at(&self, dx: isize, dy: isize) -> Complex64 {
        let r = self.radius as isize;
        self.kernel[((dy + r) as usize) * self.side() + (dx + r) as usize]
    }

    fn build(params: &GaborParams, scale: usize, orientation: usize) -> Self {
        let wavelength = params.wavelengths[scale];
        let theta = params.theta(orientation);
        let sigma = params.sigma_ratio * wavelength;
        let radius = (3.0 * sigma).ceil() as usize;
        let (s, c) = theta.sin_cos();
        let r = radius as isize;
        let g2 = params.aspect_ratio * params.aspect_ratio;
        let mut kernel = Vec::with_capacity((2 * radius + 1).pow(2));
        let mut mass = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (dx as f64, dy as f64);
                let xr = x * c + y * s;
                let yr = -x * s + y * c;
                let env = (-(xr * xr + g2 * yr * yr) / (2.0 * sigma * sigma)).exp();
                mass += env;
                kernel.push(Complex64::from_polar(env, 2.0 * PI * xr / wavelength));
            }
        }
        for k in kernel.iter_mut() {
            *k /= mass;
        }
        // remove the DC component of both quadrature parts
        let mean = kernel.iter().sum::<Complex64>() / kernel.len() as f64;
        for k in kernel.iter_mut() {
            *k -= mean;
        }
        Self {
            scale,
            orientation,
            wavelength,
            theta,
            sigma,
            radius,
            kernel,
            conjugate_of: None,
        }
    }
}

/// Filters indexed by `scale · num_orientations + orientation`.
#[derive(Debug, Clone)]
pub struct GaborBank {
    params: GaborParams,
    filters: Vec<GaborFilter>,
}

impl GaborBank {
    pub fn params(&self) -> &GaborParams {
        &self.params
    }

    pub fn filters(&self) -> &[GaborFilter] {
        &self.filters
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn index(&self, scale: usize, orientation: usize) -> usize {
        scale * self.params.num_orientations + orientation
    }

    pub fn filter(&self, scale: usize, orientation: usize) -> &GaborFilter {
        &self.filters[self.index(scale, orientation)]
    }

    pub fn max_radius(&self) -> usize {
        self.filters.iter().map(|f| f.radius).max().unwrap_or(0)
    }

    /// Prepares FFT plans and kernel spectra for images of one size.
    pub fn engine(&self, width: usize, height: usize) -> Result<FieldEngine> {
        FieldEngine::new(self, width, height)
    }
}

/// Builds `num_scales × num_orientations` DC-free complex Gabor filters.
/// With an even orientation count, orientation `r + R/2` is the exact complex
/// conjugate of orientation `r`.
pub fn build_gabor_bank(params: &GaborParams) -> Result<GaborBank> {
    params.validate()?;
    let n_or = params.num_orientations;
    let mut filters = Vec::with_capacity(params.num_scales * n_or);
    for m in 0..params.num_scales {
        for r in 0..n_or {
            let half = n_or / 2;
            if n_or.is_multiple_of(2) && r >= half {
                let base_idx = m * n_or + r - half;
                let base: &GaborFilter = &filters[base_idx];
                let mut f = base.clone();
                f.orientation = r;
                f.theta = params.theta(r);
                f.kernel = base.kernel.iter().map(|k| k.conj()).collect();
                f.conjugate_of = Some(base_idx);
                filters.push(f);
            } else {
                filters.push(GaborFilter::build(params, m, r));
            }
        }
    }
    Ok(GaborBank {
        params: params.clone(),
        filters,
    })
}

/// Per-pixel index of the orientation whose filter, over all scales, has the
/// largest response magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationField {
    map: BinMap,
}

impl OrientationField {
    pub fn width(&self) -> usize {
        self.map.width()
    }

    pub fn height(&self) -> usize {
        self.map.height()
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        self.map.get(x, y).expect("orientation field is defined everywhere")
    }

    pub fn as_bin_map(&self) -> &BinMap {
        &self.map
    }
}

/// Picks `(r, m)` with the largest magnitude, ties going to the smallest r and
/// then the smallest m. `mags[m · R + r]` holds one pixel's magnitudes.
pub fn dominant_orientation(mags: impl Fn(usize, usize) -> f64, n_scales: usize, n_or: usize) -> usize {
    let mut best = 0;
    let mut best_mag = f64::NEG_INFINITY;
    for r in 0..n_or {
        for m in 0..n_scales {
            let v = mags(m, r);
            let v = if v < MAGNITUDE_FLOOR { 0.0 } else { v };
            if v > best_mag {
                best_mag = v;
                best = r;
            }
        }
    }
    best
}

fn smooth_fft_len(min: usize) -> usize {
    let mut n = min.max(1);
    loop {
        let mut k = n;
        for p in [2, 3, 5] {
            while k.is_multiple_of(p) {
                k /= p;
            }
        }
        if k == 1 {
            return n;
        }
        n += 1;
    }
}

/// FFT convolution of images of one fixed size with every distinct filter of
/// a bank. Borders are replicated by `max_radius` pixels, so each output
/// pixel sees the same neighbourhood as a direct convolution would.
pub struct FieldEngine {
    width: usize,
    height: usize,
    pad: usize,
    fw: usize,
    fh: usize,
    n_scales: usize,
    n_or: usize,
    /// Spectrum per filter; `None` for conjugates of an earlier filter.
    spectra: Vec<Option<Vec<Complex64>>>,
    conjugate_of: Vec<Option<usize>>,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FieldEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FieldEngine")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("fft", &(self.fw, self.fh))
            .finish()
    }
}

impl FieldEngine {
    fn new(bank: &GaborBank, width: usize, height: usize) -> Result<Self> {
        let pad = bank.max_radius();
        let side = 2 * pad + 1;
        if width < side || height < side {
            return Err(Error::ImageTooSmall {
                width,
                height,
                min_width: side,
                min_height: side,
            });
        }
        let fw = smooth_fft_len(width + 2 * pad);
        let fh = smooth_fft_len(height + 2 * pad);
        let mut planner = FftPlanner::new();
        let mut engine = Self {
            width,
            height,
            pad,
            fw,
            fh,
            n_scales: bank.params.num_scales,
            n_or: bank.params.num_orientations,
            spectra: Vec::with_capacity(bank.len()),
            conjugate_of: bank.filters.iter().map(|f| f.conjugate_of).collect(),
            row_fwd: planner.plan_fft_forward(fw),
            row_inv: planner.plan_fft_inverse(fw),
            col_fwd: planner.plan_fft_forward(fh),
            col_inv: planner.plan_fft_inverse(fh),
        };
        for f in &bank.filters {
            if f.conjugate_of.is_some() {
                engine.spectra.push(None);
                continue;
            }
            let mut buf = vec![Complex64::new(0.0, 0.0); fw * fh];
            let r = f.radius as isize;
            for dy in -r..=r {
                for dx in -r..=r {
                    let u = dx.rem_euclid(fw as isize) as usize;
                    let v = dy.rem_euclid(fh as isize) as usize;
                    buf[v * fw + u] = f.at(dx, dy);
                }
            }
            engine.fft2(&mut buf);
            engine.spectra.push(Some(buf));
        }
        Ok(engine)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn fft2(&self, buf: &mut [Complex64]) {
        let (fw, fh) = (self.fw, self.fh);
        for row in buf.chunks_exact_mut(fw) {
            self.row_fwd.process(row);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); fh];
        for x in 0..fw {
            for (y, c) in col.iter_mut().enumerate() {
                *c = buf[y * fw + x];
            }
            self.col_fwd.process(&mut col);
            for (y, c) in col.iter().enumerate() {
                buf[y * fw + x] = *c;
            }
        }
    }

    /// Inverse transform, evaluated only on the rows that map back into the
    /// unpadded image; returns magnitudes of those `width × height` pixels.
    fn inverse_magnitudes(&self, buf: &mut [Complex64], out: &mut [f64]) {
        let (fw, fh) = (self.fw, self.fh);
        let mut col = vec![Complex64::new(0.0, 0.0); fh];
        for x in 0..fw {
            for (y, c) in col.iter_mut().enumerate() {
                *c = buf[y * fw + x];
            }
            self.col_inv.process(&mut col);
            for (y, c) in col.iter().enumerate() {
                buf[y * fw + x] = *c;
            }
        }
        let norm = 1.0 / (fw * fh) as f64;
        for y in 0..self.height {
            let row = &mut buf[(y + self.pad) * fw..(y + self.pad + 1) * fw];
            self.row_inv.process(row);
            for x in 0..self.width {
                out[y * self.width + x] = row[x + self.pad].norm() * norm;
            }
        }
    }

    /// Response magnitudes of every filter; conjugate filters share storage
    /// with their partner. Indexed like the bank.
    pub fn magnitudes(&self, img: &GrayImage) -> Result<Vec<Arc<Vec<f64>>>> {
        if (img.width(), img.height()) != (self.width, self.height) {
            return Err(Error::DimensionMismatch {
                expected: self.width * self.height,
                found: img.width() * img.height(),
            });
        }
        let (fw, pad) = (self.fw, self.pad as isize);
        let mut spectrum = vec![Complex64::new(0.0, 0.0); fw * self.fh];
        for v in 0..self.height + 2 * self.pad {
            for u in 0..self.width + 2 * self.pad {
                spectrum[v * fw + u] = Complex64::new(img.get_clamped(u as isize - pad, v as isize - pad), 0.0);
            }
        }
        self.fft2(&mut spectrum);

        let mut out: Vec<Arc<Vec<f64>>> = Vec::with_capacity(self.spectra.len());
        let mut buf = vec![Complex64::new(0.0, 0.0); spectrum.len()];
        for (i, s) in self.spectra.iter().enumerate() {
            match (s, self.conjugate_of[i]) {
                (Some(kernel), _) => {
                    for ((b, a), k) in buf.iter_mut().zip(&spectrum).zip(kernel) {
                        *b = a * k;
                    }
                    let mut mag = vec![0.0; self.width * self.height];
                    self.inverse_magnitudes(&mut buf, &mut mag);
                    out.push(Arc::new(mag));
                }
                (None, Some(j)) => {
                    let shared = Arc::clone(&out[j]);
                    out.push(shared);
                }
                (None, None) => unreachable!("filter without spectrum must be a conjugate"),
            }
        }
        Ok(out)
    }

    pub fn field(&self, img: &GrayImage) -> Result<OrientationField> {
        let mags = self.magnitudes(img)?;
        let (n_scales, n_or) = (self.n_scales, self.n_or);
        let mut map = BinMap::invalid(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let i = y * self.width + x;
                let r = dominant_orientation(|m, r| mags[m * n_or + r][i], n_scales, n_or);
                map.set(x, y, r);
            }
        }
        Ok(OrientationField { map })
    }
}

/// Dominant-orientation field of `img` under `bank` (replicated borders).
pub fn gabor_orientation_field(img: &GrayImage, bank: &GaborBank) -> Result<OrientationField> {
    bank.engine(img.width(), img.height())?.field(img)
}
