use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::lbp::LbpVariant;
use super::BinMap;

/// One spatial grid: `cols × rows` blocks and the LBP variant extracted in them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub name: String,
    pub cols: usize,
    pub rows: usize,
    pub lbp_variant: LbpVariant,
}

impl GridSpec {
    pub fn new(name: &str, cols: usize, rows: usize, lbp_variant: LbpVariant) -> Self {
        Self {
            name: name.to_string(),
            cols,
            rows,
            lbp_variant,
        }
    }

    pub fn block_count(&self) -> usize {
        self.cols * self.rows
    }

    /// The seven face grids G1..G7.
    pub fn default_grids() -> Vec<GridSpec> {
        use LbpVariant::*;
        vec![
            GridSpec::new("G1", 7, 5, Riu2P8R1),
            GridSpec::new("G2", 5, 7, Riu2P8R1),
            GridSpec::new("G3", 5, 5, U2P8R2),
            GridSpec::new("G4", 4, 3, U2P8R2),
            GridSpec::new("G5", 3, 4, U2P8R2),
            GridSpec::new("G6", 3, 3, U2P8R2),
            GridSpec::new("G7", 2, 2, U2P8R2),
        ]
    }
}

/// A half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub col: usize,
    pub row: usize,
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl Block {
    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

/// Tiles the image into `cols × rows` blocks with floor-rounded boundaries,
/// in row-major order.
pub fn block_partition(width: usize, height: usize, cols: usize, rows: usize) -> Result<Vec<Block>> {
    if cols == 0 || rows == 0 || cols > width || rows > height {
        return Err(Error::GridTooFine {
            cols,
            rows,
            width,
            height,
        });
    }
    let mut blocks = Vec::with_capacity(cols * rows);
    for row in 0..rows {
        for col in 0..cols {
            blocks.push(Block {
                col,
                row,
                x0: col * width / cols,
                x1: (col + 1) * width / cols,
                y0: row * height / rows,
                y1: (row + 1) * height / rows,
            });
        }
    }
    Ok(blocks)
}

/// L1-normalised histogram of the valid bins inside `block`; all zeros when
/// the block holds no valid pixel.
pub fn block_histogram(map: &BinMap, block: &Block, num_bins: usize) -> Vec<f64> {
    let mut counts = vec![0usize; num_bins];
    let mut total = 0usize;
    for y in block.y0..block.y1 {
        for x in block.x0..block.x1 {
            if let Some(b) = map.get(x, y) {
                counts[b] += 1;
                total += 1;
            }
        }
    }
    if total == 0 {
        return vec![0.0; num_bins];
    }
    let total = total as f64;
    counts.into_iter().map(|c| c as f64 / total).collect()
}
