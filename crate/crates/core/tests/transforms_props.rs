use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use reasonseg::mask::mask_union;
use reasonseg::parsing::{RenderStyle, Role, TaskMode, SEG_TOKEN};
use reasonseg::transforms::{
    append_task_template, merge_uncountable, target_masks, to_pure_text, to_semantic, TemplateMode, TemplatePool,
};
use reasonseg::Error;
use reasonseg_testkit::gen;

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(256) })]

    #[test]
    fn pure_text_drops_every_mask(seed in any::<u64>()) {
        let mut rng = gen::rng(seed);
        let img = gen::dialogue_image(&mut rng, 1);
        let record = gen::random_dialogue(&mut rng, &img, 4);
        let pure = to_pure_text(&record);
        prop_assert_eq!(pure.task_mode, TaskMode::PureText);
        prop_assert_eq!(pure.seg_count(), 0);
        let training = pure.render_dialogue(RenderStyle::Training);
        prop_assert!(!training.contains(SEG_TOKEN));
        prop_assert_eq!(training, record.render_dialogue(RenderStyle::Pure));
    }

    #[test]
    fn semantic_merge_keeps_pixels_and_text(seed in any::<u64>()) {
        let mut rng = gen::rng(seed);
        let img = gen::dialogue_image(&mut rng, 2);
        let record = gen::random_dialogue(&mut rng, &img, 4);
        let sem = to_semantic(&record, &img).unwrap();
        prop_assert_eq!(sem.task_mode, TaskMode::SidSemseg);
        prop_assert_eq!(to_pure_text(&sem), to_pure_text(&record));

        let category = |id: u64| img.annotation(id).unwrap().category_id;
        for (before, after) in record.turns.iter().zip(&sem.turns) {
            // One target per category and turn, covering the same pixels.
            let cats: Vec<u64> = after.refs().flat_map(|r| &r.targets).map(|t| category(t.ids[0])).collect();
            let distinct: BTreeSet<u64> = cats.iter().copied().collect();
            prop_assert_eq!(cats.len(), distinct.len());
            let mut want: BTreeMap<u64, Vec<_>> = BTreeMap::new();
            for id in before.refs().flat_map(|r| r.instance_ids()) {
                want.entry(category(id)).or_default().push(img.instance_mask(id).unwrap().unwrap());
            }
            for t in after.refs().flat_map(|r| &r.targets) {
                prop_assert!(t.ids.iter().all(|&id| category(id) == category(t.ids[0])));
                let got = mask_union(&t.ids.iter().map(|&id| img.instance_mask(id).unwrap().unwrap()).collect::<Vec<_>>()).unwrap();
                let expected = mask_union(&want[&category(t.ids[0])]).unwrap();
                prop_assert_eq!(got, expected);
            }
            prop_assert_eq!(distinct, want.keys().copied().collect::<BTreeSet<_>>());
        }
        let masks = target_masks(&sem, &img).unwrap();
        prop_assert_eq!(masks.len(), sem.seg_count());
    }

    #[test]
    fn uncountable_merge_bounds(seed in any::<u64>()) {
        let mut rng = gen::rng(seed);
        let img = gen::dialogue_image(&mut rng, 3);
        let record = gen::random_dialogue(&mut rng, &img, 3);
        prop_assert_eq!(&merge_uncountable(&record, &img, &BTreeSet::new()).unwrap(), &record);
        let all: BTreeSet<u64> = img.annotations.iter().map(|a| a.category_id).collect();
        let merged = merge_uncountable(&record, &img, &all).unwrap();
        prop_assert_eq!(merged.task_mode, TaskMode::SidInstseg);
        let mut sem = to_semantic(&record, &img).unwrap();
        sem.task_mode = TaskMode::SidInstseg;
        prop_assert_eq!(merged, sem);
    }

    #[test]
    fn template_lands_once_on_the_first_question(seed in any::<u64>()) {
        let mut rng = gen::rng(seed);
        let img = gen::dialogue_image(&mut rng, 4);
        let record = gen::random_dialogue(&mut rng, &img, 3);
        let candidates = [
            (TemplateMode::SidInstSeg, record.clone()),
            (TemplateMode::SidSemSeg, to_semantic(&record, &img).unwrap()),
            (TemplateMode::PureConversation, to_pure_text(&record)),
        ];
        let pool = TemplatePool::default();
        for (mode, r) in candidates {
            let with = append_task_template(&r, mode, seed).unwrap();
            let template = pool.pick(mode, seed);
            let first = with.turns[0].render(RenderStyle::Pure);
            prop_assert_eq!(with.turns[0].role, Role::Person);
            prop_assert_eq!(first, format!("{} {template}", r.turns[0].render(RenderStyle::Pure)));
            prop_assert_eq!(&with.turns[1..], &r.turns[1..]);
            prop_assert!(matches!(append_task_template(&with, mode, seed), Err(Error::TemplateAlreadyPresent)));
            for other in TemplateMode::ALL.into_iter().filter(|m| *m != mode) {
                let is_mismatch = matches!(append_task_template(&r, other, seed), Err(Error::ModeMismatch { .. }));
                prop_assert!(is_mismatch);
            }
        }
    }
}

#[test]
fn template_modes_are_a_bijection() {
    let modes: BTreeSet<TaskMode> = TemplateMode::ALL.iter().map(|m| m.task_mode()).collect();
    assert_eq!(modes.len(), TemplateMode::ALL.len());
    for m in TemplateMode::ALL {
        assert_eq!(TemplateMode::for_task_mode(m.task_mode()), m);
    }
    let pool = TemplatePool::default();
    let texts: BTreeSet<&str> = TemplateMode::ALL.iter().map(|&m| pool.pick(m, 0)).collect();
    assert_eq!(texts.len(), 5);
}

#[test]
fn semantic_conversion_rejects_semantic_input() {
    let mut rng = gen::rng(9);
    let img = gen::dialogue_image(&mut rng, 5);
    let record = gen::random_dialogue(&mut rng, &img, 2);
    let sem = to_semantic(&record, &img).unwrap();
    assert!(matches!(to_semantic(&sem, &img), Err(Error::ModeMismatch { .. })));
}
