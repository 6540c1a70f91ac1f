//! Mask AP under the COCO protocol, and gIoU / cIoU for semantic targets.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curation::ImageRecord;
use crate::error::{Error, Result};
use crate::mask::{Geometry, RasterMask};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    /// Position of the offending item in its input list.
    pub index: usize,
    pub message: String,
}

/// Everything wrong with an evaluation input, collected before failing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn push(&mut self, index: usize, message: impl Into<String>) {
        self.issues.push(ValidationIssue {
            index,
            message: message.into(),
        });
    }

    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    fn into_result(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(self))
        }
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} problem(s)", self.issues.len())?;
        for issue in self.issues.iter().take(5) {
            write!(f, "; #{}: {}", issue.index, issue.message)?;
        }
        if self.issues.len() > 5 {
            write!(f, "; ...")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionInstance {
    pub image_id: u64,
    pub category_id: u64,
    pub geometry: Geometry,
    pub score: f64,
}

/// Parameters of the AP computation. `Default` is the COCO reference setting.
#[derive(Debug, Clone, PartialEq)]
pub struct ApProtocol {
    pub iou_thresholds: Vec<f64>,
    pub recall_thresholds: Vec<f64>,
    pub max_dets: usize,
    /// Upper area bound of "small" and lower bound of "medium".
    pub small_area: f64,
    /// Upper area bound of "medium" and lower bound of "large".
    pub medium_area: f64,
    /// Categories accepted in predictions besides those present in the ground truth.
    pub extra_categories: BTreeSet<u64>,
}

impl Default for ApProtocol {
    fn default() -> Self {
        // Same arithmetic as numpy.linspace so thresholds match bit for bit.
        let step = (0.95 - 0.5) / 9.0;
        let mut iou_thresholds: Vec<f64> = (0..10).map(|i| i as f64 * step + 0.5).collect();
        iou_thresholds[9] = 0.95;
        ApProtocol {
            iou_thresholds,
            recall_thresholds: (0..=100).map(|i| i as f64 * 0.01).collect(),
            max_dets: 100,
            small_area: 32.0 * 32.0,
            medium_area: 96.0 * 96.0,
            extra_categories: BTreeSet::new(),
        }
    }
}

impl ApProtocol {
    fn area_ranges(&self) -> [(f64, f64); 4] {
        [
            (0.0, 1e10),
            (0.0, self.small_area),
            (self.small_area, self.medium_area),
            (self.medium_area, 1e10),
        ]
    }

    fn threshold_index(&self, t: f64) -> Option<usize> {
        self.iou_thresholds.iter().position(|&x| (x - t).abs() < 1e-12)
    }
}

/// One row of the AP table. `None` marks a field with no ground truth to score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ApBlock {
    #[serde(rename = "mAP")]
    pub map: Option<f64>,
    #[serde(rename = "AP50")]
    pub ap50: Option<f64>,
    #[serde(rename = "AP75")]
    pub ap75: Option<f64>,
    #[serde(rename = "AP_small")]
    pub ap_small: Option<f64>,
    #[serde(rename = "AP_medium")]
    pub ap_medium: Option<f64>,
    #[serde(rename = "AP_large")]
    pub ap_large: Option<f64>,
}

impl ApBlock {
    /// Fields in table order: AP50, AP75, mAP, small, medium, large.
    pub fn table_fields(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("AP50", self.ap50),
            ("AP75", self.ap75),
            ("mAP", self.map),
            ("AP-small", self.ap_small),
            ("AP-medium", self.ap_medium),
            ("AP-large", self.ap_large),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    #[serde(flatten)]
    pub overall: ApBlock,
    #[serde(with = "category_keys")]
    pub per_category: BTreeMap<u64, ApBlock>,
}

// JSON object keys are strings; buffered (flattened, tagged) input cannot
// coerce them back to integers on its own.
mod category_keys {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::ApBlock;

    pub fn serialize<S: Serializer>(map: &BTreeMap<u64, ApBlock>, s: S) -> Result<S::Ok, S::Error> {
        map.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u64, ApBlock>, D::Error> {
        BTreeMap::<String, ApBlock>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| {
                k.parse::<u64>()
                    .map(|k| (k, v))
                    .map_err(|_| serde::de::Error::custom(format!("category key '{k}' is not an integer")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SemSegScore {
    #[serde(rename = "gIoU")]
    pub giou: f64,
    #[serde(rename = "cIoU")]
    pub ciou: f64,
    /// Per-image IoU in ascending image id order.
    pub per_image: Vec<(u64, f64)>,
    pub warnings: Vec<String>,
}

/// Output of the `evaluate` step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EvalReport {
    Inst(ApReport),
    Sem(SemSegScore),
}

fn fmt_field(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

/// Plain-text table: AP fields in the order AP50, AP75, mAP, small, medium, large,
/// or gIoU / cIoU for semantic evaluation.
pub fn render_report(report: &EvalReport) -> String {
    let mut out = String::new();
    match report {
        EvalReport::Inst(ap) => {
            let header: Vec<String> = ap.overall.table_fields().iter().map(|(n, _)| format!("{n:>10}")).collect();
            out.push_str(&format!("{:<10}{}\n", "category", header.join("")));
            let row = |name: String, block: &ApBlock| {
                let cells: Vec<String> = block
                    .table_fields()
                    .iter()
                    .map(|(_, v)| format!("{:>10}", fmt_field(*v)))
                    .collect();
                format!("{name:<10}{}\n", cells.join(""))
            };
            out.push_str(&row("all".into(), &ap.overall));
            for (cat, block) in &ap.per_category {
                out.push_str(&row(cat.to_string(), block));
            }
        }
        EvalReport::Sem(s) => {
            out.push_str(&format!("{:>9}{:>9}\n", "gIoU", "cIoU"));
            out.push_str(&format!("{:>9.3}{:>9.3}\n", s.giou, s.ciou));
            for w in &s.warnings {
                out.push_str(&format!("warning: {w}\n"));
            }
        }
    }
    out
}

struct Det {
    input_index: usize,
    score: f64,
    area: f64,
}

/// Matching outcome of one (image, category, area range) cell.
struct CellEval {
    /// Per threshold, per detection: matched a gt, and is ignored.
    matched: Vec<Vec<bool>>,
    ignored: Vec<Vec<bool>>,
    dets: Vec<(usize, f64)>,
    non_ignored_gts: usize,
}

fn evaluate_cell(dets: &[Det], gt_areas: &[f64], ious: &[Vec<f64>], range: (f64, f64), protocol: &ApProtocol) -> CellEval {
    let outside = |a: f64| a < range.0 || a > range.1;
    // Non-ignored ground truths first, stable.
    let mut order: Vec<usize> = (0..gt_areas.len()).collect();
    order.sort_by_key(|&g| outside(gt_areas[g]));
    let gt_ignored: Vec<bool> = order.iter().map(|&g| outside(gt_areas[g])).collect();

    let nt = protocol.iou_thresholds.len();
    let mut matched = vec![vec![false; dets.len()]; nt];
    let mut ignored = vec![vec![false; dets.len()]; nt];
    for (ti, &t) in protocol.iou_thresholds.iter().enumerate() {
        let mut gt_taken = vec![false; order.len()];
        for (d, det) in dets.iter().enumerate() {
            let mut best = t.min(1.0 - 1e-10);
            let mut m: Option<usize> = None;
            for (pos, &g) in order.iter().enumerate() {
                if gt_taken[pos] {
                    continue;
                }
                if let Some(mp) = m {
                    if !gt_ignored[mp] && gt_ignored[pos] {
                        break;
                    }
                }
                if ious[d][g] < best {
                    continue;
                }
                best = ious[d][g];
                m = Some(pos);
            }
            match m {
                Some(pos) => {
                    gt_taken[pos] = true;
                    matched[ti][d] = true;
                    ignored[ti][d] = gt_ignored[pos];
                }
                None => ignored[ti][d] = outside(det.area),
            }
        }
    }
    CellEval {
        matched,
        ignored,
        dets: dets.iter().map(|d| (d.input_index, d.score)).collect(),
        non_ignored_gts: gt_ignored.iter().filter(|&&i| !i).count(),
    }
}

/// Area under the interpolated precision/recall curve for one category,
/// threshold and area range; `None` when there is no ground truth to find.
fn cell_precision(cells: &[&CellEval], ti: usize, protocol: &ApProtocol) -> Option<f64> {
    let npig: usize = cells.iter().map(|c| c.non_ignored_gts).sum();
    if npig == 0 {
        return None;
    }
    let mut all: Vec<(usize, f64, bool, bool)> = cells
        .iter()
        .flat_map(|c| {
            c.dets
                .iter()
                .enumerate()
                .map(move |(d, &(idx, score))| (idx, score, c.matched[ti][d], c.ignored[ti][d]))
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let (mut tp, mut fp) = (0u64, 0u64);
    let mut recall = Vec::with_capacity(all.len());
    let mut precision = Vec::with_capacity(all.len());
    for &(_, _, is_match, is_ignored) in &all {
        if !is_ignored {
            if is_match {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        recall.push(tp as f64 / npig as f64);
        precision.push(if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 });
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut sum = 0.0;
    for &r in &protocol.recall_thresholds {
        let pos = recall.partition_point(|&x| x < r);
        if pos >= precision.len() {
            break;
        }
        sum += precision[pos];
    }
    Some(sum / protocol.recall_thresholds.len() as f64)
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values.flatten() {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

fn validate_predictions(preds: &[PredictionInstance], images: &[ImageRecord], protocol: &ApProtocol) -> Result<()> {
    let mut report = ValidationReport::default();
    let mut seen = HashMap::new();
    for (i, img) in images.iter().enumerate() {
        if seen.insert(img.image_id, i).is_some() {
            report.push(i, format!("duplicate ground-truth image id {}", img.image_id));
        }
    }
    let mut categories: BTreeSet<u64> = images.iter().flat_map(|i| i.annotations.iter().map(|a| a.category_id)).collect();
    categories.extend(protocol.extra_categories.iter().copied());
    for (i, p) in preds.iter().enumerate() {
        match seen.get(&p.image_id) {
            None => report.push(i, format!("unknown image_id {}", p.image_id)),
            Some(&idx) => {
                if let Geometry::Rle(rle) = &p.geometry {
                    let img = &images[idx];
                    if rle.width() != img.width || rle.height() != img.height {
                        report.push(
                            i,
                            format!(
                                "mask is {}x{} but image {} is {}x{}",
                                rle.width(),
                                rle.height(),
                                img.image_id,
                                img.width,
                                img.height
                            ),
                        );
                    }
                }
            }
        }
        if !categories.contains(&p.category_id) {
            report.push(i, format!("unknown category_id {}", p.category_id));
        }
        if !(0.0..=1.0).contains(&p.score) {
            report.push(i, format!("score {} outside [0, 1]", p.score));
        }
    }
    report.into_result()
}

/// COCO-protocol mask AP. Detections are ranked by descending score; equal
/// scores keep their input order, also across images.
pub fn evaluate_ap(preds: &[PredictionInstance], images: &[ImageRecord], protocol: &ApProtocol) -> Result<ApReport> {
    validate_predictions(preds, images, protocol)?;

    let mut by_image: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, p) in preds.iter().enumerate() {
        by_image.entry(p.image_id).or_default().push(i);
    }
    let categories: BTreeSet<u64> = images.iter().flat_map(|i| i.annotations.iter().map(|a| a.category_id)).collect();
    let ranges = protocol.area_ranges();

    // cells[image][category] -> one CellEval per area range
    let per_image: Vec<Result<BTreeMap<u64, Vec<CellEval>>>> = images
        .par_iter()
        .map(|img| {
            let gt_masks: Vec<RasterMask> = img
                .annotations
                .iter()
                .map(|a| a.mask(img.width, img.height))
                .collect::<Result<_>>()?;
            let pred_idx = by_image.get(&img.image_id).map(Vec::as_slice).unwrap_or(&[]);
            let mut out = BTreeMap::new();
            let cats: BTreeSet<u64> = img
                .annotations
                .iter()
                .map(|a| a.category_id)
                .chain(pred_idx.iter().map(|&i| preds[i].category_id))
                .collect();
            for cat in cats {
                let gts: Vec<usize> = (0..img.annotations.len())
                    .filter(|&g| img.annotations[g].category_id == cat)
                    .collect();
                let mut dt_idx: Vec<usize> = pred_idx.iter().copied().filter(|&i| preds[i].category_id == cat).collect();
                dt_idx.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score).then(a.cmp(&b)));
                dt_idx.truncate(protocol.max_dets);
                let mut dets = Vec::with_capacity(dt_idx.len());
                let mut ious = Vec::with_capacity(dt_idx.len());
                for &i in &dt_idx {
                    let m = preds[i].geometry.to_mask(img.width, img.height)?;
                    ious.push(
                        gts.iter()
                            .map(|&g| crate::mask::mask_iou(&m, &gt_masks[g]))
                            .collect::<Result<Vec<f64>>>()?,
                    );
                    dets.push(Det {
                        input_index: i,
                        score: preds[i].score,
                        area: m.area() as f64,
                    });
                }
                let gt_areas: Vec<f64> = gts.iter().map(|&g| img.annotations[g].area as f64).collect();
                let cells = ranges
                    .iter()
                    .map(|&r| evaluate_cell(&dets, &gt_areas, &ious, r, protocol))
                    .collect();
                out.insert(cat, cells);
            }
            Ok(out)
        })
        .collect();
    let per_image = per_image.into_iter().collect::<Result<Vec<_>>>()?;

    let t50 = protocol.threshold_index(0.5);
    let t75 = protocol.threshold_index(0.75);
    let nt = protocol.iou_thresholds.len();
    // precision[category][range][threshold]
    let mut table: BTreeMap<u64, Vec<Vec<Option<f64>>>> = BTreeMap::new();
    for &cat in &categories {
        let rows = (0..ranges.len())
            .map(|r| {
                let cells: Vec<&CellEval> = per_image.iter().filter_map(|m| m.get(&cat)).map(|c| &c[r]).collect();
                (0..nt).map(|t| cell_precision(&cells, t, protocol)).collect()
            })
            .collect();
        table.insert(cat, rows);
    }

    let table = &table;
    let block = |cats: &[u64]| {
        let over = |r: usize, ts: &[usize]| mean(cats.iter().flat_map(|c| ts.iter().map(move |&t| table[c][r][t])));
        let all_t: Vec<usize> = (0..nt).collect();
        ApBlock {
            map: over(0, &all_t),
            ap50: t50.and_then(|t| over(0, &[t])),
            ap75: t75.and_then(|t| over(0, &[t])),
            ap_small: over(1, &all_t),
            ap_medium: over(2, &all_t),
            ap_large: over(3, &all_t),
        }
    };
    let all_cats: Vec<u64> = categories.iter().copied().collect();
    Ok(ApReport {
        overall: block(&all_cats),
        per_category: all_cats.iter().map(|&c| (c, block(&[c]))).collect(),
    })
}

/// gIoU (mean per-image IoU) and cIoU (total intersection over total union).
/// A ground-truth image without prediction counts as IoU 0 and is reported
/// in `warnings`.
pub fn evaluate_semseg(preds: &[(u64, RasterMask)], gts: &[(u64, RasterMask)]) -> Result<SemSegScore> {
    if gts.is_empty() {
        return Err(Error::EmptyInput("ground-truth list"));
    }
    let mut report = ValidationReport::default();
    let mut gt_by_id: BTreeMap<u64, &RasterMask> = BTreeMap::new();
    for (i, (id, m)) in gts.iter().enumerate() {
        if gt_by_id.insert(*id, m).is_some() {
            report.push(i, format!("duplicate ground-truth image id {id}"));
        }
    }
    let mut pred_by_id: HashMap<u64, &RasterMask> = HashMap::new();
    let mut warnings = Vec::new();
    for (i, (id, m)) in preds.iter().enumerate() {
        if pred_by_id.insert(*id, m).is_some() {
            report.push(i, format!("duplicate prediction for image id {id}"));
        }
        match gt_by_id.get(id) {
            None => warnings.push(format!("prediction for image {id} has no ground truth and was ignored")),
            Some(g) if g.same_dims(m).is_err() => report.push(
                i,
                format!(
                    "mask is {}x{} but ground truth of image {id} is {}x{}",
                    m.width(),
                    m.height(),
                    g.width(),
                    g.height()
                ),
            ),
            Some(_) => {}
        }
    }
    report.into_result()?;

    let counts: Vec<(u64, u64, u64)> = gt_by_id
        .par_iter()
        .map(|(&id, gt)| match pred_by_id.get(&id) {
            Some(p) => p.overlap_counts(gt).map(|(i, u)| (id, i, u)),
            None => Ok((id, 0, gt.area())),
        })
        .collect::<Result<_>>()?;
    for &(id, _, _) in &counts {
        if !pred_by_id.contains_key(&id) {
            warnings.push(format!("image {id} has no prediction and was scored as IoU 0"));
        }
    }
    let per_image: Vec<(u64, f64)> = counts
        .iter()
        .map(|&(id, i, u)| (id, if u == 0 { 0.0 } else { i as f64 / u as f64 }))
        .collect();
    let (total_i, total_u) = counts.iter().fold((0u64, 0u64), |(a, b), &(_, i, u)| (a + i, b + u));
    Ok(SemSegScore {
        giou: per_image.iter().map(|&(_, v)| v).sum::<f64>() / per_image.len() as f64,
        ciou: if total_u == 0 { 0.0 } else { total_i as f64 / total_u as f64 },
        per_image,
        warnings,
    })
}
