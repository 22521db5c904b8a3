//! One-vs-all enrolment, probe scoring, identification and verification.
//!
//! Every gallery image becomes a target: all enrolled images are aligned onto
//! its keypoints, described, and a PLS classifier is trained to separate the
//! target's identity (+1) from everyone else (−1). A probe is aligned onto
//! each target in turn and scored by that target's classifier; identities are
//! scored by the maximum over their entries.

mod io;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rayon::prelude::*;

pub use self::io::{load_gallery, read_gallery, save_gallery, write_gallery, GALLERY_MAGIC, GALLERY_VERSION};
use crate::alignment::{align, image_keypoints, KeyPointSet};
use crate::config::PipelineConfig;
use crate::dataset::LabeledImage;
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::image::Image;
use crate::pls::PlsModel;

pub const POSITIVE_LABEL: f64 = 1.0;
pub const NEGATIVE_LABEL: f64 = -1.0;

/// Configuration plus the reusable state derived from it.
#[derive(Debug)]
pub struct Pipeline {
    config: PipelineConfig,
    extractor: FeatureExtractor,
}

impl Pipeline {
    pub fn new(config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            extractor: FeatureExtractor::new(&config.features)?,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }

    pub fn dimension(&self) -> usize {
        self.extractor.dimension()
    }

    /// Registration keypoints of an image used as a target.
    pub fn keypoints(&self, img: &Image) -> Result<KeyPointSet> {
        let k = image_keypoints(img, self.config.sobel_threshold, self.config.cpd.max_points)?;
        if k.len() < 3 {
            return Err(Error::DegenerateGeometry(format!("only {} edge keypoints", k.len())));
        }
        Ok(k)
    }

    /// Features of `source` after alignment onto a target frame.
    pub fn aligned_features(&self, source: &Image, target: &KeyPointSet, target_dims: (usize, usize)) -> Result<Vec<f64>> {
        let warped = align(source, target, target_dims, self.config.sobel_threshold, &self.config.cpd)?;
        Ok(self.extractor.extract(&warped)?.into_values())
    }

    /// Fits one classifier. The component count is clamped to what the
    /// training set supports.
    pub fn fit(&self, rows: &[&[f64]], labels: &[f64]) -> Result<PlsModel> {
        let d = self.dimension();
        if rows.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                found: labels.len(),
            });
        }
        if !labels.contains(&POSITIVE_LABEL) || !labels.contains(&NEGATIVE_LABEL) {
            return Err(Error::InsufficientData(
                "a classifier needs both positive and negative rows".into(),
            ));
        }
        let mut x = Array2::zeros((rows.len(), d));
        for (mut dst, src) in x.rows_mut().into_iter().zip(rows) {
            if src.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: src.len(),
                });
            }
            dst.assign(&ndarray::ArrayView1::from(*src));
        }
        let y = Array1::from(labels.to_vec());
        let components = self.config.pls_components.min(rows.len() - 1).min(d);
        PlsModel::fit_owned(x, y.view(), components)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryEntry {
    pub entry_id: usize,
    pub panda_id: String,
    pub keypoints: KeyPointSet,
    /// Canvas (width, height) that probes are warped onto.
    pub target_dims: (usize, usize),
    pub model: PlsModel,
}

/// Enrolled classifiers sharing one pipeline configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Gallery {
    config: PipelineConfig,
    entries: Vec<GalleryEntry>,
}

impl Gallery {
    pub fn new(config: PipelineConfig, entries: Vec<GalleryEntry>) -> Result<Self> {
        config.validate()?;
        if entries.is_empty() {
            return Err(Error::InsufficientData("a gallery needs at least one entry".into()));
        }
        let dim = entries[0].model.dimension();
        for e in &entries {
            if e.keypoints.is_empty() {
                return Err(Error::InsufficientData(format!("entry {} has no keypoints", e.entry_id)));
            }
            let m = &e.model;
            if m.dimension() != dim || m.standardizer.means.len() != dim || m.standardizer.stds.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: m.dimension(),
                });
            }
        }
        Ok(Self { config, entries })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn entries(&self) -> &[GalleryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.entries[0].model.dimension()
    }

    /// Distinct identities in ascending order.
    pub fn id_set(&self) -> Vec<String> {
        let mut ids: Vec<_> = self.entries.iter().map(|e| e.panda_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

/// Decides which images can serve as targets, given each image's keypoint
/// failure (if any). An image without usable keypoints is skipped if its
/// identity keeps two usable images; otherwise enrolment cannot proceed.
pub(crate) fn usable_targets(images: &[&LabeledImage], failures: &[Option<String>]) -> Result<Vec<bool>> {
    let mut usable_per_id: BTreeMap<&str, usize> = BTreeMap::new();
    for (img, f) in images.iter().zip(failures) {
        *usable_per_id.entry(img.panda_id.as_str()).or_insert(0) += usize::from(f.is_none());
    }
    let mut usable = Vec::with_capacity(images.len());
    for (img, f) in images.iter().zip(failures) {
        match f {
            None => usable.push(true),
            Some(reason) => {
                if usable_per_id[img.panda_id.as_str()] < 2 {
                    return Err(Error::AlignmentFailure {
                        image: img.name.clone(),
                        reason: reason.clone(),
                    });
                }
                log::warn!("skipping {} as an enrolment target: {reason}", img.name);
                usable.push(false);
            }
        }
    }
    Ok(usable)
}

/// Trains the classifier of one target from per-image feature rows; rows that
/// failed to align are dropped with a warning.
pub(crate) fn train_entry(
    pipeline: &Pipeline,
    target: &LabeledImage,
    rows: &[(&LabeledImage, &Result<Vec<f64>>)],
) -> Result<PlsModel> {
    let mut x = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    for (img, feats) in rows {
        match feats {
            Ok(f) => {
                x.push(f.as_slice());
                y.push(if img.panda_id == target.panda_id {
                    POSITIVE_LABEL
                } else {
                    NEGATIVE_LABEL
                });
            }
            Err(e) => log::warn!("dropping {} from the classifier of {}: {e}", img.name, target.name),
        }
    }
    pipeline.fit(&x, &y).map_err(|e| match e {
        Error::InsufficientData(m) => Error::InsufficientData(format!("classifier of {}: {m}", target.name)),
        other => other,
    })
}

/// One classifier per usable image, trained on every image aligned to it
/// (the target itself included).
pub fn enroll(images: &[LabeledImage], pipeline: &Pipeline) -> Result<Gallery> {
    if images.len() < 2 {
        return Err(Error::InsufficientData(format!("enrolment needs 2 images, got {}", images.len())));
    }
    let ids = crate::dataset::identity_counts(images.iter().map(|i| i.panda_id.as_str()));
    if ids.len() < 2 {
        return Err(Error::InsufficientData("enrolment needs 2 distinct identities".into()));
    }
    let refs: Vec<&LabeledImage> = images.iter().collect();
    let keypoints: Vec<Result<KeyPointSet>> = images.par_iter().map(|i| pipeline.keypoints(&i.image)).collect();
    let failures: Vec<Option<String>> = keypoints.iter().map(|k| k.as_ref().err().map(|e| e.to_string())).collect();
    let usable = usable_targets(&refs, &failures)?;

    let entries = (0..images.len())
        .into_par_iter()
        .filter(|&t| usable[t])
        .map(|t| {
            let target = &images[t];
            let k = keypoints[t].as_ref().expect("usable target has keypoints");
            let dims = target.image.dims();
            let feats: Vec<Result<Vec<f64>>> = images
                .iter()
                .map(|src| pipeline.aligned_features(&src.image, k, dims))
                .collect();
            let rows: Vec<_> = images.iter().zip(&feats).collect();
            let model = train_entry(pipeline, target, &rows)?;
            log::debug!("enrolled {} ({} components)", target.name, model.n_components);
            Ok(GalleryEntry {
                entry_id: t,
                panda_id: target.panda_id.clone(),
                keypoints: k.clone(),
                target_dims: dims,
                model,
            })
        })
        .collect::<Vec<Result<_>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Gallery::new(pipeline.config().clone(), entries)
}

/// Per-entry scores of one probe, in gallery entry order. Entries the probe
/// could not be aligned to score −∞.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub panda_ids: Vec<String>,
    /// `(entry index, reason)` for every entry scored −∞.
    pub failures: Vec<(usize, String)>,
}

impl ScoreVector {
    /// Turns per-entry outcomes into scores; errors and non-finite values
    /// become −∞ and are recorded as failures.
    pub fn from_results(results: Vec<std::result::Result<f64, String>>, panda_ids: Vec<String>) -> Self {
        let mut scores = Vec::with_capacity(results.len());
        let mut failures = Vec::new();
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(s) if s.is_finite() => scores.push(s),
                Ok(s) => {
                    failures.push((i, format!("non-finite score {s}")));
                    scores.push(f64::NEG_INFINITY);
                }
                Err(e) => {
                    failures.push((i, e));
                    scores.push(f64::NEG_INFINITY);
                }
            }
        }
        Self {
            scores,
            panda_ids,
            failures,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Maximum score per identity, keyed by identity.
    pub fn per_identity(&self) -> BTreeMap<String, f64> {
        let mut out: BTreeMap<String, f64> = BTreeMap::new();
        for (id, &s) in self.panda_ids.iter().zip(&self.scores) {
            let e = out.entry(id.clone()).or_insert(f64::NEG_INFINITY);
            if s > *e {
                *e = s;
            }
        }
        out
    }
}

pub fn score_probe(probe: &Image, gallery: &Gallery, pipeline: &Pipeline) -> Result<ScoreVector> {
    if pipeline.config() != gallery.config() {
        return Err(Error::InvalidConfig(
            "pipeline configuration differs from the gallery's".into(),
        ));
    }
    let results: Vec<std::result::Result<f64, String>> = gallery
        .entries()
        .par_iter()
        .map(|e| {
            pipeline
                .aligned_features(probe, &e.keypoints, e.target_dims)
                .and_then(|x| e.model.predict(&x))
                .map_err(|err| err.to_string())
        })
        .collect();
    Ok(ScoreVector::from_results(
        results,
        gallery.entries().iter().map(|e| e.panda_id.clone()).collect(),
    ))
}

/// Identities ordered best first: by score descending, then by identity
/// ascending.
pub fn rank_identities(per_id: &BTreeMap<String, f64>) -> Vec<(String, f64)> {
    let mut ranked: Vec<_> = per_id.iter().map(|(k, v)| (k.clone(), *v)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

#[derive(Debug, Clone, PartialEq)]
pub struct Identification {
    pub panda_id: String,
    /// All identities, best first.
    pub ranking: Vec<(String, f64)>,
}

pub fn identify(scores: &ScoreVector) -> Result<Identification> {
    if !scores.scores.iter().any(|s| s.is_finite()) {
        return Err(Error::NoFiniteScores);
    }
    let ranking = rank_identities(&scores.per_identity());
    Ok(Identification {
        panda_id: ranking[0].0.clone(),
        ranking,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verification {
    pub accept: bool,
    pub score: f64,
}

pub fn verify(scores: &ScoreVector, claimed_id: &str, threshold: f64) -> Result<Verification> {
    let score = *scores
        .per_identity()
        .get(claimed_id)
        .ok_or_else(|| Error::UnknownIdentity(claimed_id.to_string()))?;
    Ok(Verification {
        accept: score >= threshold,
        score,
    })
}
