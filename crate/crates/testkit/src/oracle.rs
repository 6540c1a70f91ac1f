//! Slow reference implementations. Each one is written from the definition,
//! not from the library code it checks.

use std::collections::BTreeSet;

use reasonseg::curation::ImageRecord;
use reasonseg::metrics::{ApBlock, PredictionInstance};

/// Even-odd point-in-polygon test (W. R. Franklin's crossing count).
pub fn inside_even_odd(px: f64, py: f64, vertices: &[(f64, f64)]) -> bool {
    let n = vertices.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = vertices[i];
        let (xj, yj) = vertices[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Row-major occupancy from testing every pixel center.
pub fn rasterize_brute(vertices: &[(f64, f64)], width: u32, height: u32) -> Vec<bool> {
    let mut out = Vec::with_capacity(width as usize * height as usize);
    for y in 0..height {
        for x in 0..width {
            out.push(inside_even_odd(x as f64 + 0.5, y as f64 + 0.5, vertices));
        }
    }
    out
}

/// Expands column-major runs (zeros first) into row-major occupancy.
pub fn rle_expand(counts: &[u32], width: u32, height: u32) -> Vec<bool> {
    let mut column_major = Vec::new();
    let mut value = false;
    for &c in counts {
        column_major.extend(std::iter::repeat_n(value, c as usize));
        value = !value;
    }
    let (w, h) = (width as usize, height as usize);
    let mut out = vec![false; w * h];
    for (k, v) in column_major.into_iter().enumerate() {
        let (x, y) = (k / h, k % h);
        out[y * w + x] = v;
    }
    out
}

/// Intersection and union pixel counts.
pub fn pixel_counts(a: &[bool], b: &[bool]) -> (u64, u64) {
    let inter = a.iter().zip(b).filter(|(p, q)| **p && **q).count() as u64;
    let union = a.iter().zip(b).filter(|(p, q)| **p || **q).count() as u64;
    (inter, union)
}

pub fn pixel_iou(a: &[bool], b: &[bool]) -> f64 {
    let (i, u) = pixel_counts(a, b);
    if u == 0 {
        0.0
    } else {
        i as f64 / u as f64
    }
}

/// Minimum total cost over all maximum matchings, and the lexicographically
/// smallest optimal pair list, by exhaustive search. Totals are summed in
/// row order.
pub fn best_assignment(costs: &[Vec<f64>], rows: usize, cols: usize) -> (f64, Vec<(usize, usize)>) {
    let k = rows.min(cols);
    let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
    let mut current = Vec::new();
    let mut used_cols = vec![false; cols];
    search(costs, rows, cols, k, 0, &mut current, &mut used_cols, &mut best);
    best.unwrap_or((0.0, Vec::new()))
}

#[allow(clippy::too_many_arguments)]
fn search(
    costs: &[Vec<f64>],
    rows: usize,
    cols: usize,
    k: usize,
    row: usize,
    current: &mut Vec<(usize, usize)>,
    used_cols: &mut [bool],
    best: &mut Option<(f64, Vec<(usize, usize)>)>,
) {
    if current.len() == k {
        let total = current.iter().fold(0.0, |s, &(r, c)| s + costs[r][c]);
        let better = match best {
            None => true,
            Some((b, pairs)) => total < *b || (total == *b && current.as_slice() < pairs.as_slice()),
        };
        if better {
            *best = Some((total, current.clone()));
        }
        return;
    }
    if row == rows || rows - row < k - current.len() {
        return;
    }
    for c in 0..cols {
        if !used_cols[c] {
            used_cols[c] = true;
            current.push((row, c));
            search(costs, rows, cols, k, row + 1, current, used_cols, best);
            current.pop();
            used_cols[c] = false;
        }
    }
    search(costs, rows, cols, k, row + 1, current, used_cols, best);
}

struct Detection {
    order: usize,
    score: f64,
    bits: Vec<bool>,
    area: f64,
}

struct Truth {
    bits: Vec<bool>,
    area: f64,
}

/// COCO mask AP from the textbook definition: per category and IoU threshold,
/// precision at recall r is the best precision at any recall >= r.
pub fn ap_brute(preds: &[PredictionInstance], images: &[ImageRecord]) -> ApBlock {
    let step = (0.95 - 0.5) / 9.0;
    let mut thresholds: Vec<f64> = (0..10).map(|i| i as f64 * step + 0.5).collect();
    thresholds[9] = 0.95;
    let bands = [(0.0, 1e10), (0.0, 1024.0), (1024.0, 9216.0), (9216.0, 1e10)];
    let categories: BTreeSet<u64> = images.iter().flat_map(|i| i.annotations.iter().map(|a| a.category_id)).collect();

    // ap[band][threshold] collects one value per category with ground truth.
    let mut ap = vec![vec![Vec::new(); thresholds.len()]; bands.len()];
    for &cat in &categories {
        // per image: (detections sorted by score, truths)
        let mut per_image = Vec::new();
        for img in images {
            let truths: Vec<Truth> = img
                .annotations
                .iter()
                .filter(|a| a.category_id == cat)
                .map(|a| {
                    let m = a.mask(img.width, img.height).expect("valid gt");
                    Truth {
                        area: m.area() as f64,
                        bits: m.bits().to_vec(),
                    }
                })
                .collect();
            let mut dets: Vec<Detection> = preds
                .iter()
                .enumerate()
                .filter(|(_, p)| p.image_id == img.image_id && p.category_id == cat)
                .map(|(order, p)| {
                    let m = p.geometry.to_mask(img.width, img.height).expect("valid prediction");
                    Detection {
                        order,
                        score: p.score,
                        area: m.area() as f64,
                        bits: m.bits().to_vec(),
                    }
                })
                .collect();
            dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.order.cmp(&b.order)));
            dets.truncate(100);
            per_image.push((dets, truths));
        }

        for (bi, &(lo, hi)) in bands.iter().enumerate() {
            let out_of_band = |area: f64| area < lo || area > hi;
            let positives: usize = per_image
                .iter()
                .map(|(_, t)| t.iter().filter(|t| !out_of_band(t.area)).count())
                .sum();
            if positives == 0 {
                continue;
            }
            for (ti, &t) in thresholds.iter().enumerate() {
                let bar = t.min(1.0 - 1e-10);
                // (order, score, counted, true positive)
                let mut outcomes: Vec<(usize, f64, bool, bool)> = Vec::new();
                for (dets, truths) in &per_image {
                    let mut taken = vec![false; truths.len()];
                    for d in dets {
                        let pick = |want_ignored: bool, taken: &[bool]| {
                            let mut chosen: Option<(usize, f64)> = None;
                            for (g, truth) in truths.iter().enumerate() {
                                if taken[g] || out_of_band(truth.area) != want_ignored {
                                    continue;
                                }
                                let iou = pixel_iou(&d.bits, &truth.bits);
                                if iou >= bar && chosen.is_none_or(|(_, best)| iou >= best) {
                                    chosen = Some((g, iou));
                                }
                            }
                            chosen.map(|(g, _)| g)
                        };
                        let hit = pick(false, &taken).or_else(|| pick(true, &taken));
                        match hit {
                            Some(g) => {
                                taken[g] = true;
                                let ignored = out_of_band(truths[g].area);
                                outcomes.push((d.order, d.score, !ignored, true));
                            }
                            None => outcomes.push((d.order, d.score, !out_of_band(d.area), false)),
                        }
                    }
                }
                outcomes.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
                let mut curve = Vec::new();
                let (mut tp, mut seen) = (0usize, 0usize);
                for &(_, _, counted, is_tp) in &outcomes {
                    if counted {
                        seen += 1;
                        if is_tp {
                            tp += 1;
                        }
                    }
                    let precision = if seen == 0 { 0.0 } else { tp as f64 / seen as f64 };
                    curve.push((tp as f64 / positives as f64, precision));
                }
                let mut total = 0.0;
                for i in 0..=100 {
                    let r = i as f64 * 0.01;
                    let best = curve
                        .iter()
                        .filter(|(rc, _)| *rc >= r)
                        .map(|(_, p)| *p)
                        .fold(None, |m: Option<f64>, p| Some(m.map_or(p, |m| m.max(p))));
                    total += best.unwrap_or(0.0);
                }
                ap[bi][ti].push(total / 101.0);
            }
        }
    }

    let mean = |values: Vec<f64>| {
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    };
    let all_thresholds = |band: usize| mean(ap[band].iter().flatten().copied().collect());
    ApBlock {
        map: all_thresholds(0),
        ap50: mean(ap[0][0].clone()),
        ap75: mean(ap[0][5].clone()),
        ap_small: all_thresholds(1),
        ap_medium: all_thresholds(2),
        ap_large: all_thresholds(3),
    }
}
