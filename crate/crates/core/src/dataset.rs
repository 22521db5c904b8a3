//! Dataset manifests: a CSV with header `path,panda_id`, paths relative to the
//! manifest file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub panda_id: String,
}

impl ManifestEntry {
    pub fn new(path: impl Into<String>, panda_id: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            panda_id: panda_id.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    /// Directory that relative image paths are resolved against.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read(path).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let mut reader = csv::Reader::from_reader(text.as_slice());
        let headers = reader
            .headers()
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?
            .clone();
        if headers.len() != 2 || &headers[0] != "path" || &headers[1] != "panda_id" {
            return Err(Error::Manifest(format!(
                "{}: expected header `path,panda_id`",
                path.display()
            )));
        }
        let mut entries = Vec::new();
        for (i, row) in reader.deserialize::<ManifestEntry>().enumerate() {
            let entry = row.map_err(|e| Error::Manifest(format!("{} row {}: {e}", path.display(), i + 2)))?;
            if entry.path.is_empty() || entry.panda_id.is_empty() {
                return Err(Error::Manifest(format!("{} row {}: empty field", path.display(), i + 2)));
            }
            entries.push(entry);
        }
        if entries.is_empty() {
            return Err(Error::Manifest(format!("{}: no images listed", path.display())));
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, entries })
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    /// Image count per identity, sorted by identity.
    pub fn identity_counts(&self) -> BTreeMap<String, usize> {
        identity_counts(self.entries.iter().map(|e| e.panda_id.as_str()))
    }

    /// Loads every image, resizing to `face_height` where needed.
    pub fn load_images(&self, face_height: usize) -> Result<Vec<LabeledImage>> {
        self.entries
            .iter()
            .map(|e| {
                let img = Image::load(self.resolve(e))?;
                let img = if img.height() == face_height {
                    img
                } else {
                    img.resize_to_height(face_height)?
                };
                Ok(LabeledImage {
                    name: e.path.clone(),
                    panda_id: e.panda_id.clone(),
                    image: img,
                })
            })
            .collect()
    }
}

/// An image with its identity and a display name.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub name: String,
    pub panda_id: String,
    pub image: Image,
}

pub fn identity_counts<'a>(ids: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for id in ids {
        *counts.entry(id.to_string()).or_insert(0) += 1;
    }
    counts
}

/// Every identity must have at least two images.
pub fn check_closed_set<'a>(ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let singles: Vec<_> = identity_counts(ids)
        .into_iter()
        .filter(|(_, n)| *n < 2)
        .map(|(id, _)| id)
        .collect();
    if singles.is_empty() {
        Ok(())
    } else {
        Err(Error::ClosedSetViolation(format!(
            "identities with a single image: {}",
            singles.join(", ")
        )))
    }
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for e in entries {
        writer.serialize(e).map_err(|e| Error::Manifest(e.to_string()))?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Manifest(e.to_string()))?;
    fs::write(path, bytes)?;
    Ok(())
}
