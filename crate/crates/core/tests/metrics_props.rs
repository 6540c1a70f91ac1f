use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use reasonseg::curation::ImageRecord;
use reasonseg::mask::{mask_iou, Geometry, RasterMask};
use reasonseg::metrics::{evaluate_ap, evaluate_semseg, ApBlock, ApProtocol, PredictionInstance};
use reasonseg::Error;
use reasonseg_testkit::{gen, oracle};

const TOL: f64 = 1e-9;

fn fields(b: &ApBlock) -> [Option<f64>; 6] {
    [b.map, b.ap50, b.ap75, b.ap_small, b.ap_medium, b.ap_large]
}

fn close(a: &ApBlock, b: &ApBlock) -> bool {
    fields(a).iter().zip(fields(b)).all(|(x, y)| match (x, y) {
        (Some(x), Some(y)) => (x - y).abs() <= TOL,
        (None, None) => true,
        _ => false,
    })
}

fn perfect(images: &[ImageRecord]) -> Vec<PredictionInstance> {
    images
        .iter()
        .flat_map(|img| {
            img.annotations.iter().map(|a| PredictionInstance {
                image_id: img.image_id,
                category_id: a.category_id,
                geometry: a.geometry.clone(),
                score: 1.0,
            })
        })
        .collect()
}

fn mask_of(p: &PredictionInstance, images: &[ImageRecord]) -> RasterMask {
    let img = images.iter().find(|i| i.image_id == p.image_id).unwrap();
    p.geometry.to_mask(img.width, img.height).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(64) })]

    #[test]
    fn ap_matches_reference_definition(seed in any::<u64>()) {
        let (images, preds) = gen::micro_dataset(&mut gen::rng(seed));
        let got = evaluate_ap(&preds, &images, &ApProtocol::default()).unwrap();
        let want = oracle::ap_brute(&preds, &images);
        prop_assert!(close(&got.overall, &want), "{:?}\n{:?}", got.overall, want);
        if let (Some(a50), Some(a75)) = (got.overall.ap50, got.overall.ap75) {
            prop_assert!(a50 + TOL >= a75);
        }
        for v in fields(&got.overall).into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn input_order_only_matters_through_score_ties(seed in any::<u64>()) {
        let mut rng = gen::rng(seed);
        let (images, preds) = gen::micro_dataset(&mut rng);
        // Distinct scores remove tie ambiguity, so any order gives the same result.
        let mut distinct: Vec<PredictionInstance> = preds
            .into_iter()
            .enumerate()
            .map(|(i, mut p)| {
                p.score = 1.0 - i as f64 * 1e-3;
                p
            })
            .collect();
        let a = evaluate_ap(&distinct, &images, &ApProtocol::default()).unwrap();
        distinct.shuffle(&mut rng);
        let b = evaluate_ap(&distinct, &images, &ApProtocol::default()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn perfect_and_empty_detectors(seed in any::<u64>()) {
        let (images, _) = gen::micro_dataset(&mut gen::rng(seed));
        let best = evaluate_ap(&perfect(&images), &images, &ApProtocol::default()).unwrap();
        for v in fields(&best.overall).into_iter().flatten() {
            prop_assert_eq!(v, 1.0);
        }
        let any_gt = images.iter().any(|i| !i.annotations.is_empty());
        prop_assert_eq!(best.overall.map.is_some(), any_gt);
        let none = evaluate_ap(&[], &images, &ApProtocol::default()).unwrap();
        for v in fields(&none.overall).into_iter().flatten() {
            prop_assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn promoting_an_uncontested_hit_never_lowers_ap(seed in any::<u64>()) {
        let mut rng = gen::rng(seed);
        let (images, preds) = gen::micro_dataset(&mut rng);
        let img = images.choose(&mut rng).unwrap();
        let Some(target) = img.annotations.choose(&mut rng) else { return Ok(()) };
        let gt_mask = target.mask(img.width, img.height).unwrap();
        // Drop every other prediction that could claim the same object.
        let mut kept: Vec<PredictionInstance> = preds
            .into_iter()
            .filter(|p| {
                !(p.image_id == img.image_id
                    && p.category_id == target.category_id
                    && mask_iou(&mask_of(p, &images), &gt_mask).unwrap() >= 0.5)
            })
            .collect();
        kept.push(PredictionInstance {
            image_id: img.image_id,
            category_id: target.category_id,
            geometry: target.geometry.clone(),
            score: 0.1,
        });
        let before = evaluate_ap(&kept, &images, &ApProtocol::default()).unwrap();
        kept.last_mut().unwrap().score = 1.0;
        let after = evaluate_ap(&kept, &images, &ApProtocol::default()).unwrap();
        for (b, a) in fields(&before.overall).iter().zip(fields(&after.overall)) {
            if let (Some(b), Some(a)) = (b, a) {
                prop_assert!(a + TOL >= *b, "{:?} -> {:?}", before.overall, after.overall);
            }
        }
    }

    #[test]
    fn semantic_scores_ignore_input_order(seed in any::<u64>()) {
        let mut rng = gen::rng(seed);
        let n = rng.gen_range(1..=6);
        let mut gts = Vec::new();
        let mut preds = Vec::new();
        let (mut total_i, mut total_u, mut per_image) = (0u64, 0u64, 0.0);
        for id in 0..n {
            let g = gen::random_mask(&mut rng, 20);
            let (w, h) = (g.width(), g.height());
            let p = RasterMask::from_fn(w, h, |_, _| rng.gen_bool(0.3));
            let (i, u) = oracle::pixel_counts(p.bits(), g.bits());
            total_i += i;
            total_u += u;
            per_image += oracle::pixel_iou(p.bits(), g.bits());
            gts.push((id, g));
            preds.push((id, p));
        }
        let a = evaluate_semseg(&preds, &gts).unwrap();
        prop_assert!((a.giou - per_image / n as f64).abs() <= TOL);
        let ciou = if total_u == 0 { 0.0 } else { total_i as f64 / total_u as f64 };
        prop_assert!((a.ciou - ciou).abs() <= TOL);
        preds.shuffle(&mut rng);
        gts.shuffle(&mut rng);
        let b = evaluate_semseg(&preds, &gts).unwrap();
        prop_assert_eq!(a.giou, b.giou);
        prop_assert_eq!(a.ciou, b.ciou);
    }
}

fn annotated_dataset() -> Vec<ImageRecord> {
    (0..)
        .map(|seed| gen::micro_dataset(&mut gen::rng(seed)).0)
        .find(|images| !images[0].annotations.is_empty())
        .unwrap()
}

#[test]
fn unknown_image_is_a_validation_error() {
    let images = annotated_dataset();
    let bad = PredictionInstance {
        image_id: 9999,
        category_id: images[0].annotations[0].category_id,
        geometry: Geometry::Polygons(vec![]),
        score: 0.5,
    };
    match evaluate_ap(&[bad], &images, &ApProtocol::default()) {
        Err(Error::Validation(report)) => assert_eq!(report.issues[0].index, 0),
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn score_outside_unit_interval_is_rejected() {
    let images = annotated_dataset();
    let mut p = perfect(&images);
    p[0].score = 1.5;
    assert!(matches!(evaluate_ap(&p, &images, &ApProtocol::default()), Err(Error::Validation(_))));
}

#[test]
fn two_image_semantic_fixture() {
    // IoU 1/2 on a 4-pixel image and 3/4 on a 12-pixel image.
    let g1 = RasterMask::from_rect(2, 2, 0, 0, 2, 1);
    let p1 = RasterMask::from_rect(2, 2, 0, 0, 1, 1);
    let g2 = RasterMask::from_rect(4, 3, 0, 0, 4, 1);
    let p2 = RasterMask::from_rect(4, 3, 0, 0, 3, 1);
    let s = evaluate_semseg(&[(1, p1), (2, p2)], &[(1, g1), (2, g2)]).unwrap();
    assert!((s.giou - 0.625).abs() < 1e-12);
    assert!((s.ciou - 4.0 / 6.0).abs() < 1e-12);
}
