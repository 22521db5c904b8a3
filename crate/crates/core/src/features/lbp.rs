//! Local binary patterns with P = 8 circular neighbours and the uniform (u2)
//! and rotation-invariant uniform (riu2) bin mappings.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

use super::BinMap;

/// Neighbours sampled on the circle.
pub const LBP_POINTS: usize = 8;
/// Bins of the riu2 mapping: popcounts 0..=8 plus one non-uniform bin.
pub const RIU2_BINS: usize = LBP_POINTS + 2;
/// Bins of the u2 mapping: 58 uniform codes plus one non-uniform bin.
pub const U2_BINS: usize = LBP_POINTS * (LBP_POINTS - 1) + 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LbpVariant {
    #[serde(rename = "riu2_P8_R1")]
    Riu2P8R1,
    #[serde(rename = "u2_P8_R2")]
    U2P8R2,
}

impl LbpVariant {
    pub fn radius(self) -> f64 {
        match self {
            LbpVariant::Riu2P8R1 => 1.0,
            LbpVariant::U2P8R2 => 2.0,
        }
    }

    pub fn num_bins(self) -> usize {
        match self {
            LbpVariant::Riu2P8R1 => RIU2_BINS,
            LbpVariant::U2P8R2 => U2_BINS,
        }
    }

    pub fn bin(self, code: u8) -> usize {
        match self {
            LbpVariant::Riu2P8R1 => lbp_bin_riu2(code),
            LbpVariant::U2P8R2 => lbp_bin_u2(code),
        }
    }
}

/// Sample offsets `(dx, dy)` for neighbour p at angle 2πp/P, starting at
/// `(+R, 0)` and turning counter-clockwise on screen (rows grow downward).
/// Offsets within 1e-9 of an integer are snapped so that axis-aligned
/// neighbours are read without interpolation.
pub fn circle_offsets(radius: f64) -> [[f64; 2]; LBP_POINTS] {
    let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
    let mut out = [[0.0; 2]; LBP_POINTS];
    for (p, o) in out.iter_mut().enumerate() {
        let phi = 2.0 * PI * p as f64 / LBP_POINTS as f64;
        *o = [snap(radius * phi.cos()), snap(-radius * phi.sin())];
    }
    out
}

/// `Σ s(g_p − g_c)·2^p` with `s(a) = 1` iff `a ≥ 0`.
pub fn code_from_samples(center: f64, samples: &[f64; LBP_POINTS]) -> u8 {
    samples
        .iter()
        .enumerate()
        .fold(0u8, |code, (p, &g)| if g - center >= 0.0 { code | (1 << p) } else { code })
}

fn sample_code(img: &GrayImage, x: usize, y: usize, offsets: &[[f64; 2]; LBP_POINTS]) -> u8 {
    let mut samples = [0.0; LBP_POINTS];
    for (s, o) in samples.iter_mut().zip(offsets) {
        *s = img.sample_bilinear(x as f64 + o[0], y as f64 + o[1]);
    }
    code_from_samples(img.get(x, y), &samples)
}

/// LBP code at `(x, y)` on a circle of the given radius.
pub fn lbp_code(img: &GrayImage, x: usize, y: usize, radius: f64) -> Result<u8> {
    let border = radius.ceil() as usize;
    if x < border || y < border || x + border >= img.width() || y + border >= img.height() {
        return Err(Error::OutOfBounds { x, y, radius });
    }
    Ok(sample_code(img, x, y, &circle_offsets(radius)))
}

/// Number of 0/1 changes around the circular 8-bit pattern.
pub fn circular_transitions(code: u8) -> u32 {
    (code ^ code.rotate_right(1)).count_ones()
}

pub fn is_uniform(code: u8) -> bool {
    circular_transitions(code) <= 2
}

/// Rotation-invariant uniform bin: popcount for uniform codes, 9 otherwise.
pub fn lbp_bin_riu2(code: u8) -> usize {
    if is_uniform(code) {
        code.count_ones() as usize
    } else {
        LBP_POINTS + 1
    }
}

/// Uniform bin: the rank of the code among the 58 uniform codes in ascending
/// numeric order, or 58 for any non-uniform code.
pub fn lbp_bin_u2(code: u8) -> usize {
    static TABLE: OnceLock<[u8; 256]> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = [0u8; 256];
        let mut next = 0u8;
        for c in 0..=255u8 {
            if is_uniform(c) {
                t[c as usize] = next;
                next += 1;
            } else {
                t[c as usize] = (U2_BINS - 1) as u8;
            }
        }
        t
    });
    table[code as usize] as usize
}

/// Per-pixel bins of one channel. The `⌈R⌉`-pixel frame is left invalid.
pub fn lbp_map(channel: &GrayImage, variant: LbpVariant) -> Result<BinMap> {
    let radius = variant.radius();
    let border = radius.ceil() as usize;
    let (w, h) = (channel.width(), channel.height());
    let min = 2 * border + 1;
    if w < min || h < min {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min_width: min,
            min_height: min,
        });
    }
    let offsets = circle_offsets(radius);
    let mut map = BinMap::invalid(w, h);
    for y in border..h - border {
        for x in border..w - border {
            let code = sample_code(channel, x, y, &offsets);
            map.set(x, y, variant.bin(code));
        }
    }
    Ok(map)
}
