//! Dataset construction: size filtering, prompt assembly for the three
//! generation tasks, and dispatch to an external multimodal model.

mod client;
mod prompts;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mask::{bbox_of, BBox, Geometry, RasterMask};

pub use client::{run_jobs, FixtureClient, HttpClient, HttpClientConfig, JobResult, ModelClient, RunConfig};
pub use prompts::{
    build_caption_prompt, build_instseg_prompt, build_prompt, build_qa_prompt, digest_line, ImageRef, PromptJob,
    PromptKind, CAPTION_SYSTEM_TEMPLATE, INSTSEG_SYSTEM_TEMPLATE, QA_SYSTEM_TEMPLATE,
};

/// How `center_point` is derived from an instance's geometry.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterMode {
    /// Pixel containing the center of the tight bounding box.
    #[default]
    BboxCenter,
    /// Pixel containing the mean of the set pixel centers.
    MaskCentroid,
}

/// One ground-truth object of an image.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceAnnotation {
    pub instance_id: u64,
    pub category_id: u64,
    pub label_name: String,
    pub geometry: Geometry,
    /// Tight bounds of the rasterized geometry; all zero for an empty object.
    pub bbox: BBox,
    pub area: u64,
    pub center_point: (u32, u32),
}

impl InstanceAnnotation {
    /// Rasterizes `geometry` on the image canvas and derives area, bbox and center.
    pub fn from_geometry(
        instance_id: u64,
        category_id: u64,
        label_name: impl Into<String>,
        geometry: Geometry,
        width: u32,
        height: u32,
        center_mode: CenterMode,
    ) -> Result<Self> {
        let mask = geometry.to_mask(width, height)?;
        let area = mask.area();
        let bbox = bbox_of(&mask).unwrap_or(BBox {
            left: 0,
            top: 0,
            right: 0,
            bottom: 0,
        });
        let center_point = match center_mode {
            CenterMode::BboxCenter => ((bbox.left + bbox.right) / 2, (bbox.top + bbox.bottom) / 2),
            CenterMode::MaskCentroid => centroid(&mask).unwrap_or((0, 0)),
        };
        Ok(InstanceAnnotation {
            instance_id,
            category_id,
            label_name: label_name.into(),
            geometry,
            bbox,
            area,
            center_point,
        })
    }

    pub fn mask(&self, width: u32, height: u32) -> Result<RasterMask> {
        self.geometry.to_mask(width, height)
    }
}

fn centroid(mask: &RasterMask) -> Option<(u32, u32)> {
    let (mut sx, mut sy, mut n) = (0.0f64, 0.0f64, 0u64);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                sx += x as f64 + 0.5;
                sy += y as f64 + 0.5;
                n += 1;
            }
        }
    }
    (n > 0).then(|| ((sx / n as f64).floor() as u32, (sy / n as f64).floor() as u32))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: u64,
    pub width: u32,
    pub height: u32,
    pub file_name: String,
    pub annotations: Vec<InstanceAnnotation>,
}

impl ImageRecord {
    pub fn annotation(&self, instance_id: u64) -> Option<&InstanceAnnotation> {
        self.annotations.iter().find(|a| a.instance_id == instance_id)
    }

    pub fn instance_mask(&self, instance_id: u64) -> Option<Result<RasterMask>> {
        self.annotation(instance_id).map(|a| a.mask(self.width, self.height))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Images with either side below this are discarded.
    pub min_image_side: u32,
    /// Objects with fewer pixels than this are discarded.
    pub min_area: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_image_side: 512,
            min_area: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DropReason {
    ImageTooSmall { width: u32, height: u32, min_side: u32 },
    ObjectTooSmall { area: u64, min_area: u64 },
    NoAnnotationsLeft,
}

impl std::fmt::Display for DropReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DropReason::ImageTooSmall { min_side, .. } => write!(f, "image below {min_side}x{min_side}"),
            DropReason::ObjectTooSmall { min_area, .. } => {
                write!(f, "object area under {min_area} square pixels")
            }
            DropReason::NoAnnotationsLeft => f.write_str("no annotations left after filtering"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedItem {
    pub image_id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<u64>,
    pub reason: DropReason,
    /// Human-readable form of `reason`.
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<ImageRecord>,
    pub dropped: Vec<DroppedItem>,
}

/// Drops small images, then small objects, then images left without objects.
/// Both thresholds are strict: a 512x512 image and a 400 px object survive.
pub fn filter_dataset(records: Vec<ImageRecord>, config: &FilterConfig) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    let item = |image_id, instance_id, reason: DropReason| {
        let message = reason.to_string();
        DroppedItem {
            image_id,
            instance_id,
            reason,
            message,
        }
    };
    for mut record in records {
        if record.width < config.min_image_side || record.height < config.min_image_side {
            let reason = DropReason::ImageTooSmall {
                width: record.width,
                height: record.height,
                min_side: config.min_image_side,
            };
            out.dropped.push(item(record.image_id, None, reason));
            continue;
        }
        let image_id = record.image_id;
        record.annotations.retain(|a| {
            if a.area < config.min_area {
                let reason = DropReason::ObjectTooSmall {
                    area: a.area,
                    min_area: config.min_area,
                };
                out.dropped.push(item(image_id, Some(a.instance_id), reason));
                false
            } else {
                true
            }
        });
        if record.annotations.is_empty() {
            out.dropped.push(item(image_id, None, DropReason::NoAnnotationsLeft));
            continue;
        }
        out.kept.push(record);
    }
    out
}

/// Seeded train/eval split that keeps all items of one image on the same side.
/// Items keep their input order within each side.
pub fn split_by_image<T>(items: Vec<T>, image_id: impl Fn(&T) -> u64, eval_fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut ids: Vec<u64> = items.iter().map(&image_id).collect::<BTreeSet<_>>().into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_eval = (ids.len() as f64 * eval_fraction.clamp(0.0, 1.0)).round() as usize;
    let eval_ids: BTreeSet<u64> = ids[..n_eval].iter().copied().collect();
    items.into_iter().partition(|item| !eval_ids.contains(&image_id(item)))
}
