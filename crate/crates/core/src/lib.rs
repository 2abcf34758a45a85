//! Cross-scanner MR augmentation toolkit.
//!
//! Unpaired cycle-consistent translation between scanner domains, lesion
//! segmentation trained on the translated data, and the evaluation stack
//! used to compare them (overlap and lesion-wise metrics, multi-depth FID,
//! embeddings, cross-vendor coefficient of variation).

pub mod error;
pub mod experiment;
pub mod imaging;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod segmentation;
pub mod translation;

pub use error::{Error, Result};
