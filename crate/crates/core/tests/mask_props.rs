use proptest::prelude::*;
use rand::Rng;

use reasonseg::mask::{
    area, bbox_of, mask_dice, mask_iou, mask_union, rasterize, rasterize_all, rle_decode, rle_encode, Polygon,
    RasterMask, Rle,
};
use reasonseg_testkit::{gen, oracle};

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(256) })]

    #[test]
    fn rasterizer_matches_pixel_center_oracle(seed in any::<u64>()) {
        let mut rng = gen::rng(seed);
        let w = rng.gen_range(1..=64);
        let h = rng.gen_range(1..=64);
        let poly = gen::random_polygon(&mut rng, w.max(h));
        let fast = rasterize(&poly, w, h);
        let want = oracle::rasterize_brute(poly.vertices(), w, h);
        prop_assert_eq!(fast.bits(), want.as_slice());
    }

    #[test]
    fn multi_part_polygons_are_a_union(seed in any::<u64>()) {
        let mut rng = gen::rng(seed);
        let side = rng.gen_range(1..=40);
        let parts: Vec<Polygon> = (0..rng.gen_range(1..=3)).map(|_| gen::random_polygon(&mut rng, side)).collect();
        let got = rasterize_all(&parts, side, side);
        let mut want = vec![false; (side * side) as usize];
        for p in &parts {
            for (w, b) in want.iter_mut().zip(oracle::rasterize_brute(p.vertices(), side, side)) {
                *w |= b;
            }
        }
        prop_assert_eq!(got.bits(), want.as_slice());
    }

    #[test]
    fn rle_round_trip(seed in any::<u64>()) {
        let mut rng = gen::rng(seed);
        let mask = gen::random_mask(&mut rng, 64);
        let rle = rle_encode(&mask);
        prop_assert_eq!(rle.counts().iter().map(|&c| c as u64).sum::<u64>(), mask.width() as u64 * mask.height() as u64);
        prop_assert!(rle.counts().iter().skip(1).all(|&c| c > 0));
        prop_assert_eq!(rle.area(), mask.area());
        let expanded = oracle::rle_expand(rle.counts(), mask.width(), mask.height());
        prop_assert_eq!(expanded.as_slice(), mask.bits());
        prop_assert_eq!(rle_decode(&rle), mask.clone());
        let again = Rle::new(rle.width(), rle.height(), rle.counts().to_vec()).unwrap();
        prop_assert_eq!(rle_encode(&rle_decode(&again)), rle);
    }

    #[test]
    fn iou_agrees_with_pixel_counts(seed in any::<u64>()) {
        let mut rng = gen::rng(seed);
        let a = gen::random_mask(&mut rng, 32);
        let b = RasterMask::from_fn(a.width(), a.height(), |_, _| rng.gen_bool(0.4));
        let iou = mask_iou(&a, &b).unwrap();
        prop_assert_eq!(iou, mask_iou(&b, &a).unwrap());
        prop_assert_eq!(iou, oracle::pixel_iou(a.bits(), b.bits()));
        prop_assert!((0.0..=1.0).contains(&iou));
        let self_iou = mask_iou(&a, &a).unwrap();
        prop_assert_eq!(self_iou, if a.area() == 0 { 0.0 } else { 1.0 });
        let dice = mask_dice(&a, &b).unwrap();
        prop_assert!((dice - 2.0 * iou / (1.0 + iou)).abs() < 1e-12);
    }

    #[test]
    fn adding_target_pixels_never_lowers_iou(seed in any::<u64>()) {
        let mut rng = gen::rng(seed);
        let target = gen::random_mask(&mut rng, 32);
        let mut pred = RasterMask::from_fn(target.width(), target.height(), |_, _| rng.gen_bool(0.3));
        let mut last = mask_iou(&pred, &target).unwrap();
        for y in 0..target.height() {
            for x in 0..target.width() {
                if target.get(x, y) && !pred.get(x, y) && rng.gen_bool(0.5) {
                    pred.set(x, y, true);
                    let now = mask_iou(&pred, &target).unwrap();
                    prop_assert!(now >= last);
                    last = now;
                }
            }
        }
    }

    #[test]
    fn union_dominates_parts(seed in any::<u64>()) {
        let mut rng = gen::rng(seed);
        let first = gen::random_mask(&mut rng, 24);
        let (w, h) = (first.width(), first.height());
        let mut masks = vec![first];
        for _ in 0..rng.gen_range(0..4) {
            masks.push(RasterMask::from_fn(w, h, |_, _| rng.gen_bool(0.2)));
        }
        let u = mask_union(&masks).unwrap();
        let largest = masks.iter().map(area).max().unwrap();
        let total: u64 = masks.iter().map(area).sum();
        prop_assert!(area(&u) >= largest && area(&u) <= total);
        for m in &masks {
            prop_assert!(m.bits().iter().zip(u.bits()).all(|(a, b)| !*a || *b));
        }
    }

    #[test]
    fn bbox_is_tight(seed in any::<u64>()) {
        let mut rng = gen::rng(seed);
        let mask = gen::random_mask(&mut rng, 40);
        match bbox_of(&mask) {
            None => prop_assert_eq!(mask.area(), 0),
            Some(b) => {
                for y in 0..mask.height() {
                    for x in 0..mask.width() {
                        if mask.get(x, y) {
                            prop_assert!(b.contains_point(x, y));
                        }
                    }
                }
                prop_assert!((b.left..b.right).any(|x| mask.get(x, b.top)));
                prop_assert!((b.left..b.right).any(|x| mask.get(x, b.bottom - 1)));
                prop_assert!((b.top..b.bottom).any(|y| mask.get(b.left, y)));
                prop_assert!((b.top..b.bottom).any(|y| mask.get(b.right - 1, y)));
            }
        }
    }
}

#[test]
fn dimension_mismatch_is_an_error() {
    let a = RasterMask::empty(4, 4);
    let b = RasterMask::empty(4, 5);
    assert!(mask_iou(&a, &b).is_err());
    assert!(mask_union(&[a, b]).is_err());
}

#[test]
fn edge_on_pixel_center_follows_half_open_rule() {
    // Square whose edges pass through pixel centers at x = 0.5 and x = 2.5.
    let poly = Polygon::new(vec![(0.5, 0.5), (2.5, 0.5), (2.5, 2.5), (0.5, 2.5)]).unwrap();
    let got = rasterize(&poly, 4, 4);
    assert_eq!(got.bits(), oracle::rasterize_brute(poly.vertices(), 4, 4).as_slice());
}
