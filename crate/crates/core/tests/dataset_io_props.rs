use std::collections::BTreeMap;
use std::io::Write;

use proptest::prelude::*;

use reasonseg::dataset_io::{
    coco_json, load_coco, read_predictions, read_records, write_predictions, write_records, LoadOptions,
};
use reasonseg::parsing::{Provenance, TaskMode};
use reasonseg::curation::PromptKind;
use reasonseg::transforms::to_semantic;
use reasonseg::Error;
use reasonseg_testkit::gen;

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(32) })]

    #[test]
    fn records_round_trip_through_jsonl(seed in any::<u64>()) {
        let mut rng = gen::rng(seed);
        let mut records = Vec::new();
        for id in 0..4 {
            let img = gen::dialogue_image(&mut rng, id);
            let mut r = gen::random_dialogue(&mut rng, &img, 3);
            if id % 2 == 0 {
                r = to_semantic(&r, &img).unwrap();
                r.provenance = Some(Provenance::of_response(PromptKind::Qa, "raw"));
            }
            records.push(r);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        write_records(&records, &path).unwrap();
        prop_assert_eq!(read_records(&path).unwrap(), records);
    }

    #[test]
    fn predictions_round_trip(seed in any::<u64>()) {
        let (images, preds) = gen::micro_dataset(&mut gen::rng(seed));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds.jsonl");
        write_predictions(&preds, &path).unwrap();
        let back = read_predictions(&path).unwrap();
        prop_assert_eq!(back.len(), preds.len());
        for (a, b) in preds.iter().zip(&back) {
            let img = images.iter().find(|i| i.image_id == a.image_id).unwrap();
            prop_assert_eq!((a.image_id, a.category_id, a.score), (b.image_id, b.category_id, b.score));
            prop_assert_eq!(
                a.geometry.to_mask(img.width, img.height).unwrap(),
                b.geometry.to_mask(img.width, img.height).unwrap()
            );
        }
    }

    #[test]
    fn coco_export_reloads(seed in any::<u64>()) {
        let (images, _) = gen::micro_dataset(&mut gen::rng(seed));
        let categories: BTreeMap<u64, String> = images
            .iter()
            .flat_map(|i| &i.annotations)
            .map(|a| (a.category_id, a.label_name.clone()))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("coco.json");
        std::fs::write(&path, coco_json(&images, &categories).to_string()).unwrap();
        let loaded = load_coco(&path, &LoadOptions::default()).unwrap();
        prop_assert!(loaded.report.warnings.is_empty(), "{:?}", loaded.report.warnings);
        prop_assert_eq!(loaded.images.len(), images.len());
        for (a, b) in images.iter().zip(&loaded.images) {
            prop_assert_eq!(a.image_id, b.image_id);
            prop_assert_eq!(a.annotations.len(), b.annotations.len());
            for (x, y) in a.annotations.iter().zip(&b.annotations) {
                prop_assert_eq!((x.instance_id, x.category_id, x.area, x.bbox), (y.instance_id, y.category_id, y.area, y.bbox));
                prop_assert_eq!(x.mask(a.width, a.height).unwrap(), y.mask(b.width, b.height).unwrap());
            }
        }
    }
}

#[test]
fn schema_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, r#"{{"schema_version":1,"image_id":1,"task_mode":"pure_text","turns":[]}}"#).unwrap();
    writeln!(f).unwrap();
    writeln!(f, r#"{{"schema_version":1,"image_id":2,"task_mode":"nope","turns":[]}}"#).unwrap();
    drop(f);
    match read_records(&path) {
        Err(Error::Schema { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a schema error, got {other:?}"),
    }
    let ok = dir.path().join("ok.jsonl");
    std::fs::write(&ok, "{\"schema_version\":1,\"image_id\":1,\"task_mode\":\"pure_text\",\"turns\":[]}\n").unwrap();
    assert_eq!(read_records(&ok).unwrap()[0].task_mode, TaskMode::PureText);
}

#[test]
fn missing_file_is_an_io_error() {
    let err = read_records("/nonexistent/records.jsonl").unwrap_err();
    assert!(err.is_io());
}

#[test]
fn prediction_without_geometry_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.jsonl");
    std::fs::write(&path, "{\"image_id\":1,\"score\":0.5}\n").unwrap();
    assert!(matches!(read_predictions(&path), Err(Error::Schema { line: 1, .. })));
    std::fs::write(&path, "{\"image_id\":1,\"polygon\":[[0,0,4,0,4,4]],\"extra\":1}\n").unwrap();
    assert!(read_predictions(&path).is_err());
}
