use crate::error::{Error, Result};
use crate::image::GrayImage;

use super::KeyPointSet;

/// Default fraction of the maximum gradient magnitude an edge must reach.
pub const DEFAULT_THRESHOLD_FRAC: f64 = 0.25;

/// 3x3 Sobel gradients `(gx, gy)` at an interior pixel.
#[inline]
pub fn sobel_at(img: &GrayImage, x: usize, y: usize) -> (f64, f64) {
    let p = |dx: isize, dy: isize| img.get((x as isize + dx) as usize, (y as isize + dy) as usize);
    let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
    let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
    (gx, gy)
}

/// Gradient magnitude over the image; the one-pixel frame is left at zero.
pub fn sobel_magnitude(img: &GrayImage) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let mut mag = vec![0.0; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w - 1 {
            let (gx, gy) = sobel_at(img, x, y);
            mag[y * w + x] = (gx * gx + gy * gy).sqrt();
        }
    }
    mag
}

/// Edge keypoints: every interior pixel whose Sobel magnitude is at least
/// `threshold_frac` of the image maximum, in row-major order.
pub fn sobel_edges(img: &GrayImage, threshold_frac: f64) -> Result<KeyPointSet> {
    if !(threshold_frac > 0.0 && threshold_frac <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "edge threshold fraction {threshold_frac} outside (0, 1]"
        )));
    }
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min_width: 3,
            min_height: 3,
        });
    }
    let mag = sobel_magnitude(img);
    let max = mag.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::EmptyEdgeSet);
    }
    let cut = threshold_frac * max;
    let points = mag
        .iter()
        .enumerate()
        .filter(|(_, &m)| m >= cut)
        .map(|(i, _)| [(i % w) as f64, (i / w) as f64])
        .collect();
    Ok(KeyPointSet::new(points, (w, h)))
}
