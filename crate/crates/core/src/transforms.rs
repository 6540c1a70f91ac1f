//! Record conversions between supervision styles, and task templates.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::curation::ImageRecord;
use crate::error::{Error, Result};
use crate::mask::{mask_union, RasterMask};
use crate::parsing::{DialogueRecord, Role, SegRef, SegTarget, Segment, TaskMode, Turn};

pub const SEMSEG_TEMPLATE: &str =
    "The mask(s) are for semantic segmentation. No need to differentiate different instances within the same category.";
pub const INSTSEG_TEMPLATE: &str = "The mask(s) are for instance segmentation. Different instances within the same countable category should be predicted by separated masks. Uncountable category does not need separate masks.";
pub const SID_SEMSEG_TEMPLATE: &str = "Please answer the question with text and output semantic segmentation mask prediction(s). No need to differentiate different instances within the same category.";
pub const SID_INSTSEG_TEMPLATE: &str = "Please answer the question with text and output the instance segmentation mask prediction(s). Different instances within the same countable category should be predicted by separated masks. Uncountable category does not need separate masks.";
pub const PURE_CONVERSATION_TEMPLATE: &str = "Please answer the question only with text, do not output mask.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateMode {
    SemSeg,
    InstSeg,
    SidSemSeg,
    SidInstSeg,
    PureConversation,
}

impl TemplateMode {
    pub const ALL: [TemplateMode; 5] = [
        TemplateMode::SemSeg,
        TemplateMode::InstSeg,
        TemplateMode::SidSemSeg,
        TemplateMode::SidInstSeg,
        TemplateMode::PureConversation,
    ];

    /// The record mode this template is written for.
    pub fn task_mode(self) -> TaskMode {
        match self {
            TemplateMode::SemSeg => TaskMode::Semseg,
            TemplateMode::InstSeg => TaskMode::Instseg,
            TemplateMode::SidSemSeg => TaskMode::SidSemseg,
            TemplateMode::SidInstSeg => TaskMode::SidInstseg,
            TemplateMode::PureConversation => TaskMode::PureText,
        }
    }

    pub fn for_task_mode(mode: TaskMode) -> Self {
        match mode {
            TaskMode::Semseg => TemplateMode::SemSeg,
            TaskMode::Instseg => TemplateMode::InstSeg,
            TaskMode::SidSemseg => TemplateMode::SidSemSeg,
            TaskMode::SidInstseg => TemplateMode::SidInstSeg,
            TaskMode::PureText => TemplateMode::PureConversation,
        }
    }
}

/// Template strings to draw from, per mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplatePool {
    entries: HashMap<TemplateMode, Vec<String>>,
}

impl Default for TemplatePool {
    fn default() -> Self {
        let entries = [
            (TemplateMode::SemSeg, SEMSEG_TEMPLATE),
            (TemplateMode::InstSeg, INSTSEG_TEMPLATE),
            (TemplateMode::SidSemSeg, SID_SEMSEG_TEMPLATE),
            (TemplateMode::SidInstSeg, SID_INSTSEG_TEMPLATE),
            (TemplateMode::PureConversation, PURE_CONVERSATION_TEMPLATE),
        ]
        .into_iter()
        .map(|(m, s)| (m, vec![s.to_string()]))
        .collect();
        TemplatePool { entries }
    }
}

impl TemplatePool {
    /// Adds an alternative phrasing for `mode`.
    pub fn add(&mut self, mode: TemplateMode, template: impl Into<String>) {
        self.entries.entry(mode).or_default().push(template.into());
    }

    pub fn templates(&self, mode: TemplateMode) -> &[String] {
        self.entries.get(&mode).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Deterministic choice from the pool for `mode`.
    pub fn pick(&self, mode: TemplateMode, seed: u64) -> &str {
        let list = self.templates(mode);
        &list[(seed % list.len() as u64) as usize]
    }

    fn any_present(&self, text: &str) -> bool {
        self.entries.values().flatten().any(|t| text.contains(t.as_str()))
    }
}

/// Appends the template for `mode` to the first person turn.
pub fn append_task_template(record: &DialogueRecord, mode: TemplateMode, rng_seed: u64) -> Result<DialogueRecord> {
    append_task_template_from(record, mode, rng_seed, &TemplatePool::default())
}

pub fn append_task_template_from(
    record: &DialogueRecord,
    mode: TemplateMode,
    rng_seed: u64,
    pool: &TemplatePool,
) -> Result<DialogueRecord> {
    if mode.task_mode() != record.task_mode {
        return Err(Error::ModeMismatch {
            requested: mode.task_mode().to_string(),
            found: record.task_mode.to_string(),
        });
    }
    let mut out = record.clone();
    let turn = out
        .turns
        .iter_mut()
        .find(|t| t.role == Role::Person)
        .ok_or(Error::NoPersonTurn)?;
    let current: String = turn
        .segments
        .iter()
        .filter_map(|s| match s {
            Segment::Text(t) => Some(t.as_str()),
            Segment::Ref(_) => None,
        })
        .collect();
    if pool.any_present(&current) {
        return Err(Error::TemplateAlreadyPresent);
    }
    let template = pool.pick(mode, rng_seed);
    if turn.segments.is_empty() {
        turn.push_text(template);
    } else {
        turn.push_text(&format!(" {template}"));
    }
    Ok(out)
}

/// Collapses every reference to its surface word.
pub fn to_pure_text(record: &DialogueRecord) -> DialogueRecord {
    let turns = record
        .turns
        .iter()
        .map(|t| {
            let mut turn = Turn {
                role: t.role,
                segments: Vec::new(),
            };
            for seg in &t.segments {
                match seg {
                    Segment::Text(s) => turn.push_text(s),
                    Segment::Ref(r) => turn.push_text(&r.surface),
                }
            }
            turn
        })
        .collect();
    DialogueRecord {
        image_id: record.image_id,
        task_mode: TaskMode::PureText,
        turns,
        provenance: record.provenance.clone(),
    }
}

/// Within each turn, moves all instances of a merged category into one target
/// placed where the category first appears. Later references left without
/// targets become plain text.
fn merge_categories(record: &DialogueRecord, image: &ImageRecord, merge: impl Fn(u64) -> bool) -> Result<DialogueRecord> {
    if record.image_id != image.image_id {
        return Err(Error::Validation(crate::metrics::ValidationReport {
            issues: vec![crate::metrics::ValidationIssue {
                index: 0,
                message: format!(
                    "record is for image {} but annotations are for image {}",
                    record.image_id, image.image_id
                ),
            }],
        }));
    }
    let category_of = |id: u64| image.annotation(id).ok_or(Error::UnknownInstance(id));
    let mut turns = Vec::with_capacity(record.turns.len());
    for t in &record.turns {
        // category -> (ids, label), in order of first appearance
        let mut groups: Vec<(u64, Vec<u64>, String)> = Vec::new();
        for r in t.refs() {
            for id in r.instance_ids() {
                let ann = category_of(id)?;
                if !merge(ann.category_id) {
                    continue;
                }
                match groups.iter_mut().find(|g| g.0 == ann.category_id) {
                    Some(g) => {
                        if !g.1.contains(&id) {
                            g.1.push(id);
                        }
                    }
                    None => groups.push((ann.category_id, vec![id], ann.label_name.clone())),
                }
            }
        }
        let mut placed = BTreeSet::new();
        let mut turn = Turn {
            role: t.role,
            segments: Vec::new(),
        };
        for seg in &t.segments {
            let r = match seg {
                Segment::Text(s) => {
                    turn.push_text(s);
                    continue;
                }
                Segment::Ref(r) => r,
            };
            let mut targets = Vec::new();
            for target in &r.targets {
                let mut kept = Vec::new();
                for &id in &target.ids {
                    let cat = category_of(id)?.category_id;
                    if !merge(cat) {
                        kept.push(id);
                    } else if placed.insert(cat) {
                        let (_, ids, label) = groups.iter().find(|g| g.0 == cat).expect("grouped above");
                        targets.push(SegTarget {
                            ids: ids.clone(),
                            label: label.clone(),
                        });
                    }
                }
                if !kept.is_empty() {
                    targets.push(SegTarget {
                        ids: kept,
                        label: target.label.clone(),
                    });
                }
            }
            if targets.is_empty() {
                turn.push_text(&r.surface);
            } else {
                turn.segments.push(Segment::Ref(SegRef {
                    surface: r.surface.clone(),
                    targets,
                }));
            }
        }
        turns.push(turn);
    }
    Ok(DialogueRecord {
        image_id: record.image_id,
        task_mode: record.task_mode,
        turns,
        provenance: record.provenance.clone(),
    })
}

/// Merges instances of the same category into one target per category and
/// switches to the semantic mode.
pub fn to_semantic(record: &DialogueRecord, image: &ImageRecord) -> Result<DialogueRecord> {
    let mode = match record.task_mode {
        TaskMode::Instseg => TaskMode::Semseg,
        TaskMode::SidInstseg => TaskMode::SidSemseg,
        other => {
            return Err(Error::ModeMismatch {
                requested: "instance-to-semantic merge".into(),
                found: other.to_string(),
            })
        }
    };
    let mut out = merge_categories(record, image, |_| true)?;
    out.task_mode = mode;
    Ok(out)
}

/// Merges only the listed categories, leaving the mode unchanged.
pub fn merge_uncountable(record: &DialogueRecord, image: &ImageRecord, uncountable: &BTreeSet<u64>) -> Result<DialogueRecord> {
    if uncountable.is_empty() {
        return Ok(record.clone());
    }
    merge_categories(record, image, |c| uncountable.contains(&c))
}

/// Mask of every target in document order; merged targets are unions.
pub fn target_masks(record: &DialogueRecord, image: &ImageRecord) -> Result<Vec<RasterMask>> {
    let mut out = Vec::new();
    for r in record.turns.iter().flat_map(|t| t.refs()) {
        for target in &r.targets {
            let masks = target
                .ids
                .iter()
                .map(|&id| image.instance_mask(id).unwrap_or(Err(Error::UnknownInstance(id))))
                .collect::<Result<Vec<_>>>()?;
            out.push(mask_union(&masks)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curation::tests::rect_annotation;
    use crate::parsing::{parse_sid_response, RenderStyle};

    fn image() -> ImageRecord {
        ImageRecord {
            image_id: 1,
            width: 64,
            height: 64,
            file_name: "1.jpg".into(),
            annotations: vec![
                rect_annotation(1, 17, "cat", (0.0, 0.0, 10.0, 10.0), 64, 64),
                rect_annotation(2, 17, "cat", (5.0, 5.0, 20.0, 20.0), 64, 64),
                rect_annotation(3, 30, "sweater", (30.0, 30.0, 40.0, 50.0), 64, 64),
                rect_annotation(4, 1, "grass", (0.0, 50.0, 64.0, 64.0), 64, 64),
            ],
        }
    }

    fn record(text: &str) -> DialogueRecord {
        parse_sid_response(text, &image()).record.unwrap()
    }

    #[test]
    fn cats_and_sweater() {
        let r = record("<person>: What is here?\n<robot>: Two cats <1; cat> <2; cat> and a sweater <3; sweater>.");
        let s = to_semantic(&r, &image()).unwrap();
        assert_eq!(s.task_mode, TaskMode::SidSemseg);
        assert_eq!(
            s.turns[1].render(RenderStyle::Training),
            "Two cats <SEG> and a sweater <SEG>."
        );
        let masks = target_masks(&s, &image()).unwrap();
        let a = image().instance_mask(1).unwrap().unwrap();
        let b = image().instance_mask(2).unwrap().unwrap();
        assert_eq!(masks[0], mask_union(&[a, b]).unwrap());
        assert_eq!(masks[0].area(), 100 + 225 - 25);
    }

    #[test]
    fn later_mentions_lose_targets() {
        let r = record("<person>: Pets?\n<robot>: A cat <1; cat> and another cat <2; cat>.");
        let s = to_semantic(&r, &image()).unwrap();
        assert_eq!(s.turns[1].render(RenderStyle::Training), "A cat <SEG> and another cat.");
        assert_eq!(s.turns[1].render(RenderStyle::Pure), r.turns[1].render(RenderStyle::Pure));
        assert_eq!(s.instance_ids().collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn singletons_unchanged_but_mode() {
        let r = record("<person>: Anything?\n<robot>: A sweater <3; sweater>.");
        let s = to_semantic(&r, &image()).unwrap();
        assert_eq!(s.turns, r.turns);
        assert!(to_semantic(&s, &image()).is_err());
    }

    #[test]
    fn pure_text_strips_seg() {
        let r = record("<person>: Keys?\n<robot>: two cats <1; cat> <2; cat>");
        let p = to_pure_text(&r);
        assert_eq!(p.turns[1].render(RenderStyle::Training), "two cats");
        assert_eq!(to_pure_text(&p), p);
    }

    #[test]
    fn templates() {
        let r = record("<person>: Keys?\n<robot>: two cats <1; cat> <2; cat>");
        let t = append_task_template(&r, TemplateMode::SidInstSeg, 0).unwrap();
        assert_eq!(
            t.turns[0].render(RenderStyle::Pure),
            format!("Keys? {SID_INSTSEG_TEMPLATE}")
        );
        assert!(matches!(
            append_task_template(&t, TemplateMode::SidInstSeg, 0),
            Err(Error::TemplateAlreadyPresent)
        ));
        assert!(matches!(
            append_task_template(&r, TemplateMode::SemSeg, 0),
            Err(Error::ModeMismatch { .. })
        ));
        let p = append_task_template(&to_pure_text(&r), TemplateMode::PureConversation, 3).unwrap();
        assert!(p.turns[0]
            .render(RenderStyle::Pure)
            .ends_with("Please answer the question only with text, do not output mask."));
    }

    #[test]
    fn template_bijection() {
        let modes: BTreeSet<TaskMode> = TemplateMode::ALL.iter().map(|m| m.task_mode()).collect();
        assert_eq!(modes.len(), 5);
        for m in TemplateMode::ALL {
            assert_eq!(TemplateMode::for_task_mode(m.task_mode()), m);
        }
    }

    #[test]
    fn uncountable_merge_keeps_mode() {
        let r = record("<person>: Ground?\n<robot>: grass <4; grass> and cats <1; cat> <2; cat>");
        let u = merge_uncountable(&r, &image(), &BTreeSet::from([1])).unwrap();
        assert_eq!(u.task_mode, TaskMode::SidInstseg);
        assert_eq!(u.seg_count(), 3);
        let u = merge_uncountable(&r, &image(), &BTreeSet::from([17])).unwrap();
        assert_eq!(u.seg_count(), 2);
    }
}
