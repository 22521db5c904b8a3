//! Raster images, colour conversion, resizing and affine bicubic warping.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Smallest |det| accepted for an invertible affine map.
pub const MIN_DETERMINANT: f64 = 1e-12;

/// An RGB image with real-valued intensities in `[0, 255]`, row-major,
/// channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// A single-plane image with real-valued intensities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("empty {width}x{height} image")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::InvalidImage(format!(
                "buffer holds {} values, {width}x{height}x3 needs {}",
                data.len(),
                width * height * 3
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidImage("non-finite pixel value".into()));
        }
        Ok(Self { width, height, data })
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn from_gray(gray: &GrayImage) -> Self {
        Self::from_fn(gray.width, gray.height, |x, y| {
            let v = gray.get(x, y);
            [v, v, v]
        })
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| f64::from(v)).collect();
        Self {
            width: w as usize,
            height: h as usize,
            data,
        }
    }

    /// Loads a PNG or JPEG file. Grayscale inputs are replicated into all
    /// three channels.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let dynamic = image::open(path).map_err(|source| Error::ImageRead {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_rgb8(&dynamic.to_rgb8()))
    }

    /// Rounds to 8 bits per channel.
    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self
            .data
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::ImageWrite {
                path: path.to_path_buf(),
                source,
            })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn get(&self, x: usize, y: usize, channel: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + channel]
    }

    /// Extracts channel `c` (0 = R, 1 = G, 2 = B) as a plane.
    pub fn channel(&self, c: usize) -> GrayImage {
        assert!(c < 3, "channel index out of range");
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().skip(c).step_by(3).copied().collect(),
        }
    }

    /// Rec.601 luma, unrounded.
    pub fn to_grayscale(&self) -> GrayImage {
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2])
            .collect();
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Bicubic resize to `target_h` rows, keeping the aspect ratio.
    pub fn resize_to_height(&self, target_h: usize) -> Result<Self> {
        if target_h == 0 {
            return Err(Error::InvalidImage("target height must be at least 1".into()));
        }
        let target_w = ((self.width as f64 * target_h as f64 / self.height as f64).round() as usize).max(1);
        if target_w == self.width && target_h == self.height {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / target_w as f64;
        let sy = self.height as f64 / target_h as f64;
        Ok(Self::from_fn(target_w, target_h, |x, y| {
            let u = (x as f64 + 0.5) * sx - 0.5;
            let v = (y as f64 + 0.5) * sy - 0.5;
            self.sample_bicubic(u, v)
        }))
    }

    /// Catmull-Rom sample of all channels at a real position, replicating the
    /// border for out-of-range taps and clamping to `[0, 255]`.
    pub fn sample_bicubic(&self, u: f64, v: f64) -> [f64; 3] {
        let taps = BicubicTaps::new(u, v, self.width, self.height);
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = taps
                .apply(|x, y| self.data[(y * self.width + x) * 3 + c])
                .clamp(0.0, 255.0);
        }
        out
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("empty {width}x{height} image")));
        }
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "buffer holds {} values, {width}x{height} needs {}",
                data.len(),
                width * height
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidImage("non-finite pixel value".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Pixel access with coordinates clamped into the image.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    /// Bilinear sample; `(u, v)` must lie inside the image.
    #[inline]
    pub fn sample_bilinear(&self, u: f64, v: f64) -> f64 {
        let x0 = (u.floor() as usize).min(self.width - 1);
        let y0 = (v.floor() as usize).min(self.height - 1);
        let fx = u - x0 as f64;
        let fy = v - y0 as f64;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        // a + f * (b - a) keeps constant neighbourhoods exact.
        let top = self.get(x0, y0) + fx * (self.get(x1, y0) - self.get(x0, y0));
        let bottom = self.get(x0, y1) + fx * (self.get(x1, y1) - self.get(x0, y1));
        top + fy * (bottom - top)
    }
}

/// Catmull-Rom kernel (a = -0.5).
#[inline]
fn catmull_rom(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// The 4x4 neighbourhood and weights of one bicubic sample.
struct BicubicTaps {
    xs: [usize; 4],
    ys: [usize; 4],
    wx: [f64; 4],
    wy: [f64; 4],
}

impl BicubicTaps {
    fn new(u: f64, v: f64, width: usize, height: usize) -> Self {
        let (xs, wx) = Self::axis(u, width);
        let (ys, wy) = Self::axis(v, height);
        Self { xs, ys, wx, wy }
    }

    fn axis(p: f64, len: usize) -> ([usize; 4], [f64; 4]) {
        let base = p.floor();
        let frac = p - base;
        let base = base as i64;
        let max = len as i64 - 1;
        let mut idx = [0usize; 4];
        let mut w = [0.0; 4];
        for k in 0..4 {
            let off = k as i64 - 1;
            idx[k] = (base + off).clamp(0, max) as usize;
            w[k] = catmull_rom(frac - off as f64);
        }
        (idx, w)
    }

    #[inline]
    fn apply(&self, f: impl Fn(usize, usize) -> f64) -> f64 {
        let mut acc = 0.0;
        for (j, &y) in self.ys.iter().enumerate() {
            if self.wy[j] == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for (i, &x) in self.xs.iter().enumerate() {
                if self.wx[i] != 0.0 {
                    row += self.wx[i] * f(x, y);
                }
            }
            acc += self.wy[j] * row;
        }
        acc
    }
}

/// A 2D affine map `p ↦ linear · p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub linear: [[f64; 2]; 2],
    pub translation: [f64; 2],
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineTransform {
    pub fn new(linear: [[f64; 2]; 2], translation: [f64; 2]) -> Self {
        Self { linear, translation }
    }

    pub fn identity() -> Self {
        Self::new([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::new([[1.0, 0.0], [0.0, 1.0]], [tx, ty])
    }

    /// Rotation by `angle` radians and uniform `scale` about `center`, then a
    /// shift by `shift`.
    pub fn similarity_about(center: [f64; 2], angle: f64, scale: f64, shift: [f64; 2]) -> Self {
        let (s, c) = angle.sin_cos();
        let linear = [[scale * c, -scale * s], [scale * s, scale * c]];
        let t = [
            center[0] - (linear[0][0] * center[0] + linear[0][1] * center[1]) + shift[0],
            center[1] - (linear[1][0] * center[0] + linear[1][1] * center[1]) + shift[1],
        ];
        Self::new(linear, t)
    }

    pub fn det(&self) -> f64 {
        self.linear[0][0] * self.linear[1][1] - self.linear[0][1] * self.linear[1][0]
    }

    #[inline]
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let b = &self.linear;
        [
            b[0][0] * p[0] + b[0][1] * p[1] + self.translation[0],
            b[1][0] * p[0] + b[1][1] * p[1] + self.translation[1],
        ]
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.det();
        if !det.is_finite() || det.abs() <= MIN_DETERMINANT {
            return Err(Error::SingularTransform { det });
        }
        let b = &self.linear;
        let inv = [[b[1][1] / det, -b[0][1] / det], [-b[1][0] / det, b[0][0] / det]];
        let t = self.translation;
        let ti = [
            -(inv[0][0] * t[0] + inv[0][1] * t[1]),
            -(inv[1][0] * t[0] + inv[1][1] * t[1]),
        ];
        Ok(Self::new(inv, ti))
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn compose(&self, first: &Self) -> Self {
        let a = &self.linear;
        let b = &first.linear;
        let mut linear = [[0.0; 2]; 2];
        for (i, row) in linear.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        let t = self.apply(first.translation);
        Self::new(linear, t)
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().flatten().chain(self.translation.iter()).all(|v| v.is_finite())
    }
}

/// Warps `src` onto a `canvas_w` x `canvas_h` canvas. `xform` maps source
/// coordinates to canvas coordinates; every canvas pixel is pulled from the
/// source through the inverse map.
pub fn warp_affine_bicubic(
    src: &Image,
    xform: &AffineTransform,
    canvas_w: usize,
    canvas_h: usize,
) -> Result<Image> {
    if canvas_w == 0 || canvas_h == 0 {
        return Err(Error::InvalidImage("empty warp canvas".into()));
    }
    let inv = xform.inverse()?;
    Ok(Image::from_fn(canvas_w, canvas_h, |x, y| {
        let [u, v] = inv.apply([x as f64, y as f64]);
        src.sample_bicubic(u, v)
    }))
}
