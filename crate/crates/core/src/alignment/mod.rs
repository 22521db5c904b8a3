//! Pairwise alignment: edge keypoints, affine CPD registration and the warp
//! of the source image onto the target canvas.

mod cpd;
mod sobel;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use self::cpd::{cpd_affine, CpdDiagnostics, CpdIteration, CpdParams};
pub use self::sobel::{sobel_at, sobel_edges, sobel_magnitude, DEFAULT_THRESHOLD_FRAC};
use crate::error::Result;
use crate::image::{warp_affine_bicubic, AffineTransform, Image};

/// 2D pixel coordinates of edge pixels, together with the dimensions of the
/// image they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyPointSet {
    points: Vec<[f64; 2]>,
    source_dims: (usize, usize),
}

impl KeyPointSet {
    pub fn new(points: Vec<[f64; 2]>, source_dims: (usize, usize)) -> Self {
        Self { points, source_dims }
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn source_dims(&self) -> (usize, usize) {
        self.source_dims
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// CSV with columns `x,y`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,y")?;
        for p in &self.points {
            writeln!(out, "{},{}", p[0], p[1])?;
        }
        Ok(())
    }
}

/// Caps a keypoint set at `max_points` by keeping every `⌈n / max_points⌉`-th
/// point in `(y, x)` order. Sets already within the cap are returned as is.
///
/// `_seed` is reserved for a randomised mode; the current selection is fully
/// deterministic.
pub fn subsample_keypoints(k: &KeyPointSet, max_points: usize, _seed: u64) -> KeyPointSet {
    let n = k.len();
    if n <= max_points {
        return k.clone();
    }
    let mut sorted = k.points.clone();
    sorted.sort_by(|a, b| a[1].total_cmp(&b[1]).then(a[0].total_cmp(&b[0])));
    let step = n.div_ceil(max_points.max(1));
    KeyPointSet::new(sorted.into_iter().step_by(step).collect(), k.source_dims)
}

/// Edge keypoints of an image as used for registration: Sobel edges of the
/// luma plane, capped to `max_points`.
pub fn image_keypoints(img: &Image, threshold_frac: f64, max_points: usize) -> Result<KeyPointSet> {
    let edges = sobel_edges(&img.to_grayscale(), threshold_frac)?;
    Ok(subsample_keypoints(&edges, max_points, 0))
}

/// Alignment of one image onto a target frame.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub warped: Image,
    pub transform: AffineTransform,
    pub diagnostics: CpdDiagnostics,
}

/// Registers `source` against the target keypoints and warps it onto the
/// target canvas (`target_dims` = width, height).
pub fn align_detailed(
    source: &Image,
    target_keypoints: &KeyPointSet,
    target_dims: (usize, usize),
    threshold_frac: f64,
    params: &CpdParams,
) -> Result<Alignment> {
    let source_keypoints = image_keypoints(source, threshold_frac, params.max_points)?;
    let (transform, diagnostics) = cpd_affine(&source_keypoints, target_keypoints, params)?;
    let warped = warp_affine_bicubic(source, &transform, target_dims.0, target_dims.1)?;
    Ok(Alignment {
        warped,
        transform,
        diagnostics,
    })
}

/// The wrapped image: `source` registered onto the target keypoints and
/// resampled on the target canvas.
pub fn align(
    source: &Image,
    target_keypoints: &KeyPointSet,
    target_dims: (usize, usize),
    threshold_frac: f64,
    params: &CpdParams,
) -> Result<Image> {
    align_detailed(source, target_keypoints, target_dims, threshold_frac, params).map(|a| a.warped)
}
