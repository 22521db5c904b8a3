//! Binary gallery container (`.gal`).
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! "PANDAGAL"  u32 version  u64 len  config JSON
//! u64 entry count, then per entry:
//!   u64 entry_id  u32 len  panda_id (UTF-8)  u64 width  u64 height
//!   u64 keypoint source width  u64 source height  u64 count  count × (f64 x, f64 y)
//!   u64 n_components  u64 dim  dim × f64 beta  dim × f64 means  dim × f64 stds
//!   f64 y_mean  f64 y_std
//! u32 CRC-32 of everything before it
//! ```

use std::fs;
use std::path::Path;

use crate::alignment::KeyPointSet;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::pls::{PlsModel, Standardizer};

use super::{Gallery, GalleryEntry};

pub const GALLERY_MAGIC: &[u8; 8] = b"PANDAGAL";
pub const GALLERY_VERSION: u32 = 1;

const HEADER_LEN: usize = GALLERY_MAGIC.len() + 4;
const CRC_LEN: usize = 4;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }

    fn bytes_u64(&mut self, b: &[u8]) {
        self.u64(b.len());
        self.0.extend_from_slice(b);
    }
}

/// Serialises a gallery to bytes.
pub fn write_gallery(g: &Gallery) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(GALLERY_MAGIC);
    w.u32(GALLERY_VERSION);
    w.bytes_u64(g.config().to_canonical_json().as_bytes());
    w.u64(g.len());
    for e in g.entries() {
        w.u64(e.entry_id);
        w.u32(e.panda_id.len() as u32);
        w.0.extend_from_slice(e.panda_id.as_bytes());
        w.u64(e.target_dims.0);
        w.u64(e.target_dims.1);
        let (sw, sh) = e.keypoints.source_dims();
        w.u64(sw);
        w.u64(sh);
        w.u64(e.keypoints.len());
        for p in e.keypoints.points() {
            w.f64(p[0]);
            w.f64(p[1]);
        }
        let m = &e.model;
        w.u64(m.n_components);
        w.u64(m.beta.len());
        w.f64s(&m.beta);
        w.f64s(&m.standardizer.means);
        w.f64s(&m.standardizer.stds);
        w.f64(m.standardizer.y_mean);
        w.f64(m.standardizer.y_std);
    }
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptGallery(format!("unexpected end of data at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::CorruptGallery(format!("length {v} does not fit in memory")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::CorruptGallery("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::CorruptGallery(e.to_string()))
    }
}

/// Parses a gallery. Checks, in order: magic, version, checksum, contents.
pub fn read_gallery(bytes: &[u8]) -> Result<Gallery> {
    if bytes.len() < HEADER_LEN + CRC_LEN {
        return Err(if bytes.len() >= GALLERY_MAGIC.len() && &bytes[..GALLERY_MAGIC.len()] != GALLERY_MAGIC {
            Error::NotAGallery
        } else {
            Error::ChecksumMismatch
        });
    }
    if &bytes[..GALLERY_MAGIC.len()] != GALLERY_MAGIC {
        return Err(Error::NotAGallery);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != GALLERY_VERSION {
        return Err(Error::FormatVersionMismatch {
            found: version,
            expected: GALLERY_VERSION,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - CRC_LEN);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::ChecksumMismatch);
    }

    let mut r = Reader {
        buf: body,
        pos: HEADER_LEN,
    };
    let config_len = r.u64()?;
    let config_json = r.string(config_len)?;
    let config: PipelineConfig =
        serde_json::from_str(&config_json).map_err(|e| Error::CorruptGallery(format!("config: {e}")))?;
    let count = r.u64()?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let entry_id = r.u64()?;
        let id_len = r.u32()? as usize;
        let panda_id = r.string(id_len)?;
        let target_dims = (r.u64()?, r.u64()?);
        let source_dims = (r.u64()?, r.u64()?);
        let n_points = r.u64()?;
        let flat = r.f64s(n_points.checked_mul(2).ok_or_else(|| Error::CorruptGallery("length overflow".into()))?)?;
        let points = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        let n_components = r.u64()?;
        let dim = r.u64()?;
        let beta = r.f64s(dim)?;
        let means = r.f64s(dim)?;
        let stds = r.f64s(dim)?;
        let y_mean = r.f64()?;
        let y_std = r.f64()?;
        entries.push(GalleryEntry {
            entry_id,
            panda_id,
            keypoints: KeyPointSet::new(points, source_dims),
            target_dims,
            model: PlsModel {
                beta,
                standardizer: Standardizer {
                    means,
                    stds,
                    y_mean,
                    y_std,
                },
                n_components,
            },
        });
    }
    if r.pos != body.len() {
        return Err(Error::CorruptGallery(format!(
            "{} trailing bytes after the entry table",
            body.len() - r.pos
        )));
    }
    Gallery::new(config, entries).map_err(|e| Error::CorruptGallery(e.to_string()))
}

pub fn save_gallery(g: &Gallery, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_gallery(g))?;
    Ok(())
}

pub fn load_gallery(path: impl AsRef<Path>) -> Result<Gallery> {
    read_gallery(&fs::read(path)?)
}
