//! COCO ingestion and the line-delimited JSON formats used between steps.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::curation::{CenterMode, ImageRecord, InstanceAnnotation};
use crate::error::{Error, Result};
use crate::mask::{Geometry, Polygon, RasterMask, Rle};
use crate::metrics::PredictionInstance;
use crate::parsing::{DialogueRecord, SerializedRecord};

#[derive(Debug, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    categories: Vec<CocoCategory>,
}

#[derive(Debug, Deserialize)]
struct CocoImage {
    id: u64,
    width: u32,
    height: u32,
    #[serde(default)]
    file_name: String,
}

#[derive(Debug, Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

#[derive(Debug, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    segmentation: CocoSegmentation,
    #[serde(default)]
    area: Option<f64>,
    #[serde(default)]
    bbox: Option<[f64; 4]>,
    #[serde(default)]
    iscrowd: u8,
}

/// COCO `segmentation`: polygon list or uncompressed RLE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CocoSegmentation {
    Polygons(Vec<Vec<f64>>),
    Rle(RleJson),
}

/// `{"size": [height, width], "counts": [...]}`. A string `counts` (compressed
/// RLE) is not supported.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleJson {
    pub size: [u32; 2],
    pub counts: serde_json::Value,
}

impl RleJson {
    pub fn from_rle(rle: &Rle) -> Self {
        RleJson {
            size: [rle.height(), rle.width()],
            counts: serde_json::Value::from(rle.counts().to_vec()),
        }
    }

    pub fn to_rle(&self) -> std::result::Result<Rle, String> {
        let counts: Vec<u32> = match &self.counts {
            serde_json::Value::String(_) => return Err("compressed RLE strings are not supported".into()),
            other => serde_json::from_value(other.clone()).map_err(|e| format!("bad RLE counts: {e}"))?,
        };
        Rle::new(self.size[1], self.size[0], counts).map_err(|e| e.to_string())
    }
}

impl CocoSegmentation {
    pub fn to_geometry(&self) -> std::result::Result<Geometry, String> {
        match self {
            CocoSegmentation::Polygons(parts) => parts
                .iter()
                .map(|p| Polygon::from_flat(p).map_err(|e| e.to_string()))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Geometry::Polygons),
            CocoSegmentation::Rle(r) => r.to_rle().map(Geometry::Rle),
        }
    }

    pub fn from_geometry(geometry: &Geometry) -> Self {
        match geometry {
            Geometry::Polygons(parts) => CocoSegmentation::Polygons(parts.iter().map(Polygon::to_flat).collect()),
            Geometry::Rle(rle) => CocoSegmentation::Rle(RleJson::from_rle(rle)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    /// Allowed relative difference between stored and recomputed area.
    pub area_tolerance: f64,
    /// Allowed difference, in pixels, per stored bbox coordinate.
    pub bbox_tolerance: f64,
    pub center_mode: CenterMode,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            area_tolerance: 0.01,
            bbox_tolerance: 1.0,
            center_mode: CenterMode::BboxCenter,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    /// Stored area/bbox values that disagree with the rasterized geometry.
    pub warnings: Vec<String>,
    /// Crowd annotations are skipped.
    pub skipped_crowd: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CocoDataset {
    pub images: Vec<ImageRecord>,
    pub categories: BTreeMap<u64, String>,
    pub report: LoadReport,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn coco_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Coco {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn list(ids: &BTreeSet<u64>) -> String {
    ids.iter().map(u64::to_string).collect::<Vec<_>>().join(", ")
}

/// Loads a COCO instance file; areas, bboxes and centers are recomputed from
/// the geometry and compared against the stored values.
pub fn load_coco(path: impl AsRef<Path>, options: &LoadOptions) -> Result<CocoDataset> {
    let path = path.as_ref();
    let file: CocoFile = serde_json::from_reader(open(path)?).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;

    let mut image_index: HashMap<u64, usize> = HashMap::new();
    let mut duplicates = BTreeSet::new();
    for (i, img) in file.images.iter().enumerate() {
        if img.width == 0 || img.height == 0 {
            return Err(coco_error(path, format!("image {} has zero size", img.id)));
        }
        if image_index.insert(img.id, i).is_some() {
            duplicates.insert(img.id);
        }
    }
    if !duplicates.is_empty() {
        return Err(coco_error(path, format!("duplicate image ids: {}", list(&duplicates))));
    }
    let categories: BTreeMap<u64, String> = file.categories.iter().map(|c| (c.id, c.name.clone())).collect();

    let missing_images: BTreeSet<u64> = file
        .annotations
        .iter()
        .map(|a| a.image_id)
        .filter(|id| !image_index.contains_key(id))
        .collect();
    if !missing_images.is_empty() {
        return Err(coco_error(path, format!("annotations reference unknown image ids: {}", list(&missing_images))));
    }
    let missing_categories: BTreeSet<u64> = file
        .annotations
        .iter()
        .map(|a| a.category_id)
        .filter(|id| !categories.contains_key(id))
        .collect();
    if !missing_categories.is_empty() {
        return Err(coco_error(
            path,
            format!("annotations reference unknown category ids: {}", list(&missing_categories)),
        ));
    }
    let mut seen = BTreeSet::new();
    let dup_ann: BTreeSet<u64> = file.annotations.iter().map(|a| a.id).filter(|id| !seen.insert(*id)).collect();
    if !dup_ann.is_empty() {
        return Err(coco_error(path, format!("duplicate annotation ids: {}", list(&dup_ann))));
    }

    let mut report = LoadReport::default();
    let usable: Vec<&CocoAnnotation> = file
        .annotations
        .iter()
        .filter(|a| {
            if a.iscrowd != 0 {
                report.skipped_crowd.push(a.id);
                false
            } else {
                true
            }
        })
        .collect();

    let built: Vec<std::result::Result<(InstanceAnnotation, Vec<String>), String>> = usable
        .par_iter()
        .map(|a| {
            let img = &file.images[image_index[&a.image_id]];
            let geometry = a.segmentation.to_geometry().map_err(|e| format!("annotation {}: {e}", a.id))?;
            let ann = InstanceAnnotation::from_geometry(
                a.id,
                a.category_id,
                categories[&a.category_id].clone(),
                geometry,
                img.width,
                img.height,
                options.center_mode,
            )
            .map_err(|e| format!("annotation {}: {e}", a.id))?;
            let mut warnings = Vec::new();
            if let Some(stored) = a.area {
                let diff = (stored - ann.area as f64).abs();
                if diff > options.area_tolerance * stored.abs().max(ann.area as f64) {
                    warnings.push(format!(
                        "annotation {}: stored area {stored} differs from rasterized area {}",
                        a.id, ann.area
                    ));
                }
            }
            if let Some([x, y, w, h]) = a.bbox {
                let b = ann.bbox;
                let recomputed = [b.left as f64, b.top as f64, b.width() as f64, b.height() as f64];
                if [x, y, w, h]
                    .iter()
                    .zip(recomputed)
                    .any(|(s, r)| (s - r).abs() > options.bbox_tolerance)
                {
                    warnings.push(format!(
                        "annotation {}: stored bbox [{x}, {y}, {w}, {h}] differs from rasterized [{}, {}, {}, {}]",
                        a.id, recomputed[0], recomputed[1], recomputed[2], recomputed[3]
                    ));
                }
            }
            Ok((ann, warnings))
        })
        .collect();

    let mut images: Vec<ImageRecord> = file
        .images
        .iter()
        .map(|i| ImageRecord {
            image_id: i.id,
            width: i.width,
            height: i.height,
            file_name: i.file_name.clone(),
            annotations: Vec::new(),
        })
        .collect();
    let mut errors = Vec::new();
    for (a, result) in usable.iter().zip(built) {
        match result {
            Ok((ann, warnings)) => {
                report.warnings.extend(warnings);
                images[image_index[&a.image_id]].annotations.push(ann);
            }
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        return Err(coco_error(path, errors.join("; ")));
    }
    for w in &report.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(CocoDataset {
        images,
        categories,
        report,
    })
}

/// Serializes a dataset back to COCO JSON, with recomputed area and bbox.
pub fn coco_json(images: &[ImageRecord], categories: &BTreeMap<u64, String>) -> serde_json::Value {
    let imgs: Vec<_> = images
        .iter()
        .map(|i| serde_json::json!({"id": i.image_id, "width": i.width, "height": i.height, "file_name": i.file_name}))
        .collect();
    let anns: Vec<_> = images
        .iter()
        .flat_map(|i| {
            i.annotations.iter().map(move |a| {
                serde_json::json!({
                    "id": a.instance_id,
                    "image_id": i.image_id,
                    "category_id": a.category_id,
                    "segmentation": CocoSegmentation::from_geometry(&a.geometry),
                    "area": a.area,
                    "bbox": [a.bbox.left, a.bbox.top, a.bbox.width(), a.bbox.height()],
                    "iscrowd": 0,
                })
            })
        })
        .collect();
    let cats: Vec<_> = categories
        .iter()
        .map(|(id, name)| serde_json::json!({"id": id, "name": name}))
        .collect();
    serde_json::json!({"images": imgs, "annotations": anns, "categories": cats})
}

/// Writes one JSON document per line.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads one JSON document per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_records(records: &[DialogueRecord], path: impl AsRef<Path>) -> Result<()> {
    let serialized: Vec<SerializedRecord> = records.iter().map(DialogueRecord::to_serialized).collect();
    write_jsonl(path, &serialized)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<DialogueRecord>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| Error::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let s: SerializedRecord = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        out.push(s.to_record().map_err(schema)?);
    }
    Ok(out)
}

/// One prediction line: exactly one of `rle` / `polygon`, optional score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionLine {
    pub image_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rle: Option<RleJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polygon: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl PredictionLine {
    pub fn geometry(&self) -> std::result::Result<Geometry, String> {
        match (&self.rle, &self.polygon) {
            (Some(r), None) => CocoSegmentation::Rle(r.clone()).to_geometry(),
            (None, Some(p)) => CocoSegmentation::Polygons(p.clone()).to_geometry(),
            _ => Err("exactly one of 'rle' and 'polygon' is required".into()),
        }
    }
}

/// Reads predictions; a missing score becomes 1.0 and a missing category 0.
pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionInstance>> {
    let path = path.as_ref();
    read_jsonl::<PredictionLine>(path)?
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            let geometry = l.geometry().map_err(|message| Error::Schema {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            })?;
            Ok(PredictionInstance {
                image_id: l.image_id,
                category_id: l.category_id.unwrap_or(0),
                geometry,
                score: l.score.unwrap_or(1.0),
            })
        })
        .collect()
}

pub fn write_predictions(preds: &[PredictionInstance], path: impl AsRef<Path>) -> Result<()> {
    let lines: Vec<PredictionLine> = preds
        .iter()
        .map(|p| {
            let (rle, polygon) = match CocoSegmentation::from_geometry(&p.geometry) {
                CocoSegmentation::Rle(r) => (Some(r), None),
                CocoSegmentation::Polygons(v) => (None, Some(v)),
            };
            PredictionLine {
                image_id: p.image_id,
                category_id: Some(p.category_id),
                rle,
                polygon,
                score: Some(p.score),
            }
        })
        .collect();
    write_jsonl(path, &lines)
}

/// Semantic ground truth: the union of every annotation of each image.
pub fn semantic_targets(images: &[ImageRecord]) -> Result<Vec<(u64, RasterMask)>> {
    images
        .par_iter()
        .map(|img| {
            let mut mask = RasterMask::empty(img.width, img.height);
            for a in &img.annotations {
                let m = a.mask(img.width, img.height)?;
                mask = crate::mask::mask_union(&[mask, m])?;
            }
            Ok((img.image_id, mask))
        })
        .collect()
}
