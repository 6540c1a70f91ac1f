//! Seeded random inputs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reasonseg::curation::{CenterMode, ImageRecord, InstanceAnnotation};
use reasonseg::mask::{rle_encode, Geometry, Polygon, RasterMask};
use reasonseg::metrics::PredictionInstance;
use reasonseg::parsing::{DialogueRecord, Role, SegRef, SegTarget, Segment, TaskMode, Turn};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random mask up to `max_side` on each side, with a random fill density.
pub fn random_mask(rng: &mut impl Rng, max_side: u32) -> RasterMask {
    let w = rng.gen_range(1..=max_side);
    let h = rng.gen_range(1..=max_side);
    let density: f64 = *[0.0, 0.05, 0.5, 0.95, 1.0].choose(rng).unwrap_or(&0.5);
    let density = if rng.gen_bool(0.3) { rng.gen() } else { density };
    RasterMask::from_fn(w, h, |_, _| rng.gen_bool(density))
}

/// A coordinate that is often an integer or half-integer, to land on pixel
/// edges and centers.
fn coord(rng: &mut impl Rng, max: f64) -> f64 {
    match rng.gen_range(0..3) {
        0 => rng.gen_range(0..=(max as u32)) as f64,
        1 => rng.gen_range(0..=(2.0 * max) as u32) as f64 * 0.5,
        _ => rng.gen_range(0.0..=max),
    }
}

/// Convex or star-shaped polygon (or, rarely, a self-intersecting one)
/// spanning a canvas of `side x side`, occasionally reaching past it.
pub fn random_polygon(rng: &mut impl Rng, side: u32) -> Polygon {
    let s = side as f64;
    let n = rng.gen_range(3..=10);
    let cx = coord(rng, s);
    let cy = coord(rng, s);
    let mut vertices = Vec::with_capacity(n);
    match rng.gen_range(0..4) {
        // star: random radius per vertex around a center
        0 | 1 => {
            let mut angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
            angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for a in angles {
                let r = rng.gen_range(0.5..s);
                vertices.push(((cx + r * a.cos()).max(0.0), (cy + r * a.sin()).max(0.0)));
            }
        }
        // convex: points on one ellipse
        2 => {
            let rx = rng.gen_range(0.5..s);
            let ry = rng.gen_range(0.5..s);
            let mut angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
            angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for a in angles {
                vertices.push(((cx + rx * a.cos()).max(0.0), (cy + ry * a.sin()).max(0.0)));
            }
        }
        // arbitrary vertex order, possibly self-intersecting, with grid-aligned points
        _ => {
            for _ in 0..n {
                vertices.push((coord(rng, s + 2.0), coord(rng, s + 2.0)));
            }
        }
    }
    Polygon::new(vertices).expect("generated vertices are finite and non-negative")
}

/// `rows x cols` costs; integer-valued when `integer` so sums are exact and
/// ties are common.
pub fn random_costs(rng: &mut impl Rng, rows: usize, cols: usize, integer: bool) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| if integer { rng.gen_range(0..8) as f64 } else { rng.gen_range(0.0..1.0) })
                .collect()
        })
        .collect()
}

pub const MICRO_SIDE: u32 = 112;

fn rect_geometry(l: f64, t: f64, r: f64, b: f64) -> Geometry {
    Geometry::Polygons(vec![Polygon::new(vec![(l, t), (r, t), (r, b), (l, b)]).expect("rect")])
}

fn random_rect(rng: &mut impl Rng) -> (f64, f64, f64, f64) {
    // side lengths chosen to populate every area band
    const SIDES: [u32; 9] = [4, 12, 20, 31, 33, 40, 60, 96, 100];
    let w = SIDES[rng.gen_range(0..SIDES.len())];
    let h = SIDES[rng.gen_range(0..SIDES.len())];
    let l = rng.gen_range(0..=MICRO_SIDE - w);
    let t = rng.gen_range(0..=MICRO_SIDE - h);
    (l as f64, t as f64, (l + w) as f64, (t + h) as f64)
}

/// Up to 4 images of 112x112 with up to 5 rectangle or blob instances over up
/// to 3 categories, plus predictions that jitter, miss, or hallucinate.
pub fn micro_dataset(rng: &mut ChaCha8Rng) -> (Vec<ImageRecord>, Vec<PredictionInstance>) {
    let n_images = rng.gen_range(1..=4);
    let n_categories = rng.gen_range(1..=3u64);
    let mut images = Vec::new();
    let mut preds = Vec::new();
    let mut next_id = 1;
    let scores = [0.2, 0.5, 0.5, 0.7, 0.9, 1.0];
    for img in 0..n_images {
        let image_id = 10 + img as u64;
        let mut annotations = Vec::new();
        for _ in 0..rng.gen_range(0..=5) {
            let cat = rng.gen_range(1..=n_categories);
            let (l, t, r, b) = random_rect(rng);
            let geometry = if rng.gen_bool(0.8) {
                rect_geometry(l, t, r, b)
            } else {
                Geometry::Polygons(vec![random_polygon(rng, MICRO_SIDE)])
            };
            let ann = InstanceAnnotation::from_geometry(
                next_id,
                cat,
                format!("c{cat}"),
                geometry,
                MICRO_SIDE,
                MICRO_SIDE,
                CenterMode::BboxCenter,
            )
            .expect("polygon geometry");
            next_id += 1;
            if ann.area == 0 {
                continue;
            }
            annotations.push(ann);
        }
        for ann in &annotations {
            if rng.gen_bool(0.2) {
                continue;
            }
            let b = ann.bbox;
            let dx = rng.gen_range(-6i32..=6) as f64;
            let dy = rng.gen_range(-6i32..=6) as f64;
            let clamp = |v: f64| v.clamp(0.0, MICRO_SIDE as f64);
            let geometry = match rng.gen_range(0..4) {
                0 => ann.geometry.clone(),
                1 => {
                    let m = ann.mask(MICRO_SIDE, MICRO_SIDE).expect("valid");
                    Geometry::Rle(rle_encode(&m))
                }
                _ => rect_geometry(
                    clamp(b.left as f64 + dx),
                    clamp(b.top as f64 + dy),
                    clamp(b.right as f64 + dx),
                    clamp(b.bottom as f64 + dy),
                ),
            };
            let category_id = if rng.gen_bool(0.1) {
                rng.gen_range(1..=n_categories)
            } else {
                ann.category_id
            };
            preds.push(PredictionInstance {
                image_id,
                category_id,
                geometry,
                score: *scores.choose(rng).unwrap_or(&0.5),
            });
        }
        for _ in 0..rng.gen_range(0..=2) {
            let (l, t, r, b) = random_rect(rng);
            preds.push(PredictionInstance {
                image_id,
                category_id: rng.gen_range(1..=n_categories),
                geometry: rect_geometry(l, t, r, b),
                score: *scores.choose(rng).unwrap_or(&0.5),
            });
        }
        images.push(ImageRecord {
            image_id,
            width: MICRO_SIDE,
            height: MICRO_SIDE,
            file_name: format!("{image_id}.jpg"),
            annotations,
        });
    }
    // predictions may only name categories that have ground truth
    let known: std::collections::BTreeSet<u64> =
        images.iter().flat_map(|i| i.annotations.iter().map(|a| a.category_id)).collect();
    preds.retain(|p| known.contains(&p.category_id));
    preds.shuffle(rng);
    (images, preds)
}

const WORDS: &[&str] = &[
    "the", "a", "two", "near", "left", "of", "is", "are", "sits", "on", "what", "where", "bright", "table", "window",
    "light", "and", "with", "behind", "small", "large", "red", "green", "quiet", "scene", "object", "x-ray", "3",
    "it's", "e.g.", "(maybe)", "well,",
];

const SURFACES: &[&str] = &["cats", "cat", "keyboards", "dog", "sweater", "grass", "people", "it", "them", "ones"];

const CATEGORIES: &[(u64, &str)] = &[(17, "cat"), (18, "dog"), (76, "keyboard"), (1, "person"), (124, "dining table")];

/// An image whose annotations carry every id the dialogue generator uses.
pub fn dialogue_image(rng: &mut impl Rng, image_id: u64) -> ImageRecord {
    let side = 64;
    let mut annotations = Vec::new();
    let n = rng.gen_range(1..=8);
    for k in 0..n {
        let (cat, label) = *CATEGORIES.choose(rng).unwrap_or(&CATEGORIES[0]);
        let l = rng.gen_range(0..48) as f64;
        let t = rng.gen_range(0..48) as f64;
        let w = rng.gen_range(1..16) as f64;
        let h = rng.gen_range(1..16) as f64;
        let id = 1000 + image_id * 100 + k as u64;
        annotations.push(
            InstanceAnnotation::from_geometry(id, cat, label, rect_geometry(l, t, l + w, t + h), side, side, CenterMode::BboxCenter)
                .expect("rect"),
        );
    }
    ImageRecord {
        image_id,
        width: side,
        height: side,
        file_name: format!("{image_id}.jpg"),
        annotations,
    }
}

fn words(rng: &mut impl Rng, lo: usize, hi: usize) -> String {
    let n = rng.gen_range(lo..=hi);
    let mut out = String::new();
    for i in 0..n {
        if i > 0 {
            out.push(if rng.gen_bool(0.05) { '\n' } else { ' ' });
        }
        out.push_str(WORDS.choose(rng).unwrap_or(&"the"));
    }
    out
}

fn targets(rng: &mut impl Rng, unused: &mut Vec<u64>, image: &ImageRecord) -> Vec<SegTarget> {
    let k = rng.gen_range(1..=3).min(unused.len());
    (0..k)
        .map(|_| {
            let id = unused.remove(rng.gen_range(0..unused.len()));
            let label = image.annotation(id).map(|a| a.label_name.clone()).unwrap_or_default();
            SegTarget::instance(id, label)
        })
        .collect()
}

/// A dialogue in canonical form: it renders to tagged text that parses back
/// to itself. Ids are never repeated.
pub fn random_dialogue(rng: &mut impl Rng, image: &ImageRecord, max_exchanges: usize) -> DialogueRecord {
    let mut unused: Vec<u64> = image.annotations.iter().map(|a| a.instance_id).collect();
    let mut turns = Vec::new();
    for _ in 0..rng.gen_range(1..=max_exchanges) {
        let q = format!("{}{}", words(rng, 1, 8), if rng.gen_bool(0.5) { "?" } else { "" });
        turns.push(Turn::text(Role::Person, q));

        let mut turn = Turn {
            role: Role::Robot,
            segments: Vec::new(),
        };
        if rng.gen_bool(0.1) && !unused.is_empty() {
            turn.segments.push(Segment::Ref(SegRef {
                surface: String::new(),
                targets: targets(rng, &mut unused, image),
            }));
            turn.push_text(&format!(" {}", words(rng, 1, 3)));
        }
        for _ in 0..rng.gen_range(0..=4) {
            match rng.gen_range(0..3) {
                0 | 1 if !unused.is_empty() => {
                    let after_ref = matches!(turn.segments.last(), Some(Segment::Ref(_)));
                    if rng.gen_bool(0.7) || !after_ref {
                        let text = words(rng, 1, 4);
                        if turn.segments.is_empty() {
                            turn.push_text(&format!("{text} "));
                        } else {
                            turn.push_text(&format!(" {text} "));
                        }
                    }
                    turn.segments.push(Segment::Ref(SegRef {
                        surface: SURFACES.choose(rng).unwrap_or(&"it").to_string(),
                        targets: targets(rng, &mut unused, image),
                    }));
                }
                _ => {
                    let text = words(rng, 1, 5);
                    let sep = if turn.segments.is_empty() { "" } else { " " };
                    turn.push_text(&format!("{sep}{text}"));
                }
            }
        }
        match rng.gen_range(0..3) {
            0 => turn.push_text("."),
            1 => turn.push_text(&format!(", {}.", words(rng, 1, 3))),
            _ => {}
        }
        if turn.segments.is_empty() {
            turn.push_text(&words(rng, 1, 4));
        }
        turns.push(turn);
    }
    DialogueRecord {
        image_id: image.image_id,
        task_mode: TaskMode::SidInstseg,
        turns,
        provenance: None,
    }
}
