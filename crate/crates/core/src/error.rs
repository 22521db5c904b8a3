use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the recognition pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("affine transform is singular (|det| = {det:e})")]
    SingularTransform { det: f64 },
    #[error("no pixel passed the edge threshold")]
    EmptyEdgeSet,
    #[error("degenerate point geometry: {0}")]
    DegenerateGeometry(String),
    #[error("registration objective became non-finite at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("sample circle at ({x}, {y}) with radius {radius} leaves the image")]
    OutOfBounds { x: usize, y: usize, radius: f64 },
    #[error("image {width}x{height} is too small (need at least {min_width}x{min_height})")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min_width: usize,
        min_height: usize,
    },
    #[error("grid {cols}x{rows} is finer than the {width}x{height} image")]
    GridTooFine {
        cols: usize,
        rows: usize,
        width: usize,
        height: usize,
    },
    #[error("n_components = {requested} outside 1..={max}")]
    InvalidComponents { requested: usize, max: usize },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("alignment of image {image} failed: {reason}")]
    AlignmentFailure { image: String, reason: String },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no finite score available")]
    NoFiniteScores,
    #[error("unknown identity {0:?}")]
    UnknownIdentity(String),
    #[error("closed-set violation: {0}")]
    ClosedSetViolation(String),
    #[error("score list is empty")]
    EmptyScores,
    #[error("not a gallery file")]
    NotAGallery,
    #[error("gallery format version {found} is not supported (expected {expected})")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("gallery checksum mismatch (file truncated or corrupted)")]
    ChecksumMismatch,
    #[error("corrupt gallery: {0}")]
    CorruptGallery(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("cannot read image {path}: {source}")]
    ImageRead {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("cannot write image {path}: {source}")]
    ImageWrite {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
