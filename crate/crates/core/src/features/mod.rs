//! Multi-grid texture features: per-channel LBP histograms and Gabor
//! orientation-field histograms, concatenated into one vector.
//!
//! The layout is fixed by the [`FeatureConfig`] alone:
//!
//! 1. LBP part: for every grid in order, for every block in row-major order,
//!    for channels R, G, B, the grid's LBP-variant histogram.
//! 2. Gabor part: for every grid, for every block, the orientation histogram
//!    of the luma image's orientation field.

pub mod gabor;
pub mod grid;
pub mod lbp;

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

pub use self::gabor::{
    build_gabor_bank, gabor_orientation_field, FieldEngine, GaborBank, GaborFilter, GaborParams,
    OrientationField,
};
pub use self::grid::{block_histogram, block_partition, Block, GridSpec};
pub use self::lbp::{lbp_bin_riu2, lbp_bin_u2, lbp_code, lbp_map, LbpVariant};
use crate::error::{Error, Result};
use crate::image::Image;

/// Smallest image side accepted by feature extraction.
pub const MIN_FEATURE_SIDE: usize = 16;

/// A per-pixel bin index map; pixels may be invalid (excluded from
/// histograms).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinMap {
    width: usize,
    height: usize,
    bins: Vec<u16>,
}

impl BinMap {
    pub const INVALID: u16 = u16::MAX;

    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bins: vec![Self::INVALID; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bins(&self) -> &[u16] {
        &self.bins
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<usize> {
        match self.bins[y * self.width + x] {
            Self::INVALID => None,
            b => Some(b as usize),
        }
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, bin: usize) {
        debug_assert!(bin < Self::INVALID as usize);
        self.bins[y * self.width + x] = bin as u16;
    }

    pub fn valid_count(&self) -> usize {
        self.bins.iter().filter(|&&b| b != Self::INVALID).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub grids: Vec<GridSpec>,
    pub gabor: GaborParams,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            grids: GridSpec::default_grids(),
            gabor: GaborParams::default(),
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grids.is_empty() {
            return Err(Error::InvalidConfig("at least one grid is required".into()));
        }
        for g in &self.grids {
            if g.cols == 0 || g.rows == 0 {
                return Err(Error::InvalidConfig(format!("grid {} has an empty axis", g.name)));
            }
        }
        self.gabor.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    R,
    G,
    B,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::R, Channel::G, Channel::B];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Descriptor {
    Lbp { variant: LbpVariant, channel: Channel },
    Gabor,
}

/// A contiguous run of coordinates holding one block histogram.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub grid: usize,
    pub block: usize,
    pub descriptor: Descriptor,
    pub offset: usize,
    pub bins: usize,
}

/// Origin of one feature coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coordinate {
    pub grid: usize,
    pub block: usize,
    pub descriptor: Descriptor,
    pub bin: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub grid_names: Vec<String>,
    pub segments: Vec<Segment>,
    pub dimension: usize,
}

impl FeatureLayout {
    pub fn from_config(config: &FeatureConfig) -> Self {
        let mut segments = Vec::new();
        let mut offset = 0;
        let mut push = |grid, block, descriptor, bins| {
            segments.push(Segment {
                grid,
                block,
                descriptor,
                offset,
                bins,
            });
            offset += bins;
        };
        for (gi, g) in config.grids.iter().enumerate() {
            for block in 0..g.block_count() {
                for channel in Channel::ALL {
                    let descriptor = Descriptor::Lbp {
                        variant: g.lbp_variant,
                        channel,
                    };
                    push(gi, block, descriptor, g.lbp_variant.num_bins());
                }
            }
        }
        for (gi, g) in config.grids.iter().enumerate() {
            for block in 0..g.block_count() {
                push(gi, block, Descriptor::Gabor, config.gabor.num_orientations);
            }
        }
        Self {
            grid_names: config.grids.iter().map(|g| g.name.clone()).collect(),
            segments,
            dimension: offset,
        }
    }

    pub fn coordinate(&self, index: usize) -> Option<Coordinate> {
        if index >= self.dimension {
            return None;
        }
        let pos = self.segments.partition_point(|s| s.offset <= index) - 1;
        let s = &self.segments[pos];
        Some(Coordinate {
            grid: s.grid,
            block: s.block,
            descriptor: s.descriptor,
            bin: index - s.offset,
        })
    }
}

/// A feature vector together with the layout describing its coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
    layout: Arc<FeatureLayout>,
}

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Histogram slice of one segment.
    pub fn segment(&self, s: &Segment) -> &[f64] {
        &self.values[s.offset..s.offset + s.bins]
    }

    /// Writes the values as little-endian f32 to `path` and the layout as JSON
    /// to `path` with a `.json` extension appended.
    pub fn write_dump(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        std::fs::write(path, bytes)?;
        let mut sidecar = path.as_os_str().to_owned();
        sidecar.push(".json");
        let mut f = std::fs::File::create(sidecar)?;
        serde_json::to_writer_pretty(&mut f, self.layout.as_ref())?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

/// Reusable extractor: holds the Gabor bank, the layout and per-image-size
/// FFT engines.
pub struct FeatureExtractor {
    config: FeatureConfig,
    bank: GaborBank,
    layout: Arc<FeatureLayout>,
    engines: RwLock<HashMap<(usize, usize), Arc<FieldEngine>>>,
}

impl std::fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeatureExtractor")
            .field("config", &self.config)
            .field("dimension", &self.layout.dimension)
            .finish()
    }
}

impl FeatureExtractor {
    pub fn new(config: &FeatureConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            bank: build_gabor_bank(&config.gabor)?,
            layout: Arc::new(FeatureLayout::from_config(config)),
            engines: RwLock::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn dimension(&self) -> usize {
        self.layout.dimension
    }

    pub fn bank(&self) -> &GaborBank {
        &self.bank
    }

    fn engine(&self, width: usize, height: usize) -> Result<Arc<FieldEngine>> {
        if let Some(e) = self.engines.read().expect("engine cache poisoned").get(&(width, height)) {
            return Ok(Arc::clone(e));
        }
        let engine = Arc::new(self.bank.engine(width, height)?);
        let mut cache = self.engines.write().expect("engine cache poisoned");
        Ok(Arc::clone(cache.entry((width, height)).or_insert(engine)))
    }

    pub fn orientation_field(&self, img: &Image) -> Result<OrientationField> {
        self.engine(img.width(), img.height())?.field(&img.to_grayscale())
    }

    pub fn extract(&self, img: &Image) -> Result<FeatureVector> {
        let (w, h) = img.dims();
        if w < MIN_FEATURE_SIDE || h < MIN_FEATURE_SIDE {
            return Err(Error::ImageTooSmall {
                width: w,
                height: h,
                min_width: MIN_FEATURE_SIDE,
                min_height: MIN_FEATURE_SIDE,
            });
        }
        let field = self.orientation_field(img)?;

        let channels: Vec<_> = Channel::ALL.iter().map(|c| img.channel(c.index())).collect();
        let mut lbp_maps: HashMap<LbpVariant, Vec<BinMap>> = HashMap::new();
        for g in &self.config.grids {
            if let Entry::Vacant(slot) = lbp_maps.entry(g.lbp_variant) {
                let maps = channels
                    .iter()
                    .map(|c| lbp_map(c, g.lbp_variant))
                    .collect::<Result<Vec<_>>>()?;
                slot.insert(maps);
            }
        }

        let partitions = self
            .config
            .grids
            .iter()
            .map(|g| block_partition(w, h, g.cols, g.rows))
            .collect::<Result<Vec<_>>>()?;

        let mut values = Vec::with_capacity(self.layout.dimension);
        for (g, blocks) in self.config.grids.iter().zip(&partitions) {
            let maps = &lbp_maps[&g.lbp_variant];
            for block in blocks {
                for map in maps {
                    values.extend(block_histogram(map, block, g.lbp_variant.num_bins()));
                }
            }
        }
        let n_or = self.config.gabor.num_orientations;
        for blocks in &partitions {
            for block in blocks {
                values.extend(block_histogram(field.as_bin_map(), block, n_or));
            }
        }
        debug_assert_eq!(values.len(), self.layout.dimension);
        Ok(FeatureVector {
            values,
            layout: Arc::clone(&self.layout),
        })
    }
}

/// One-shot feature extraction.
pub fn extract_features(img: &Image, config: &FeatureConfig) -> Result<FeatureVector> {
    FeatureExtractor::new(config)?.extract(img)
}
