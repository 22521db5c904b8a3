//! Pipeline and run configuration.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alignment::{CpdParams, DEFAULT_THRESHOLD_FRAC};
use crate::error::{Error, Result};
use crate::features::FeatureConfig;

pub const CONFIG_VERSION: u32 = 1;
pub const DEFAULT_PLS_COMPONENTS: usize = 15;
pub const DEFAULT_FACE_HEIGHT: usize = 100;

/// Everything that determines enrolment and scoring numerically. Stored inside
/// gallery files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub features: FeatureConfig,
    pub cpd: CpdParams,
    /// Sobel keypoint threshold as a fraction of the maximum gradient magnitude.
    pub sobel_threshold: f64,
    pub pls_components: usize,
    /// Loaded images are resized to this height, keeping the aspect ratio.
    pub face_height: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            cpd: CpdParams::default(),
            sobel_threshold: DEFAULT_THRESHOLD_FRAC,
            pls_components: DEFAULT_PLS_COMPONENTS,
            face_height: DEFAULT_FACE_HEIGHT,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.cpd.validate()?;
        if !(self.sobel_threshold > 0.0 && self.sobel_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "sobel_threshold {} outside (0, 1]",
                self.sobel_threshold
            )));
        }
        if self.pls_components == 0 {
            return Err(Error::InvalidConfig("pls_components must be at least 1".into()));
        }
        if self.face_height == 0 {
            return Err(Error::InvalidConfig("face_height must be at least 1".into()));
        }
        Ok(())
    }

    /// Compact JSON, the canonical form used for hashing and gallery headers.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Top-level configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub pipeline: PipelineConfig,
    /// Seed for the synthetic fixture generator.
    pub seed: u64,
    /// Worker threads; `null` means all available cores.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            pipeline: PipelineConfig::default(),
            seed: 42,
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::InvalidConfig(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("threads must be at least 1".into()));
        }
        self.pipeline.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serialises");
        s.push('\n');
        s
    }
}
