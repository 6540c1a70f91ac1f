//! Tooling for reasoning-segmentation datasets: mask geometry, target
//! matching, COCO mask AP and gIoU/cIoU, prompt curation, response parsing
//! and record transforms.

pub mod curation;
pub mod dataset_io;
pub mod error;
pub mod mask;
pub mod matching;
pub mod metrics;
pub mod parsing;
pub mod transforms;

pub use error::{Error, Result};
