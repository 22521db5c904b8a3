//! Individual animal face recognition from small datasets.
//!
//! The pipeline aligns every image onto a target image's frame (Sobel edge
//! keypoints registered with affine Coherent Point Drift, then a bicubic warp),
//! describes the aligned image with multi-grid LBP and Gabor orientation
//! histograms, and trains one PLS regression classifier per gallery image in a
//! one-vs-all fashion. [`evaluation`] runs the leave-one-out closed-set
//! protocol and reports ROC, TAR at fixed FAR and rank-k accuracy.

pub mod alignment;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod image;
pub mod pls;
pub mod recognition;
pub mod synth;

pub use crate::error::{Error, Result};
pub use crate::image::{AffineTransform, GrayImage, Image};
