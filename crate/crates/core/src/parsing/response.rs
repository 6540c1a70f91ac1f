use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashSet};
use std::sync::OnceLock;

use regex::Regex;

use super::{
    split_surface, Diagnostic, DialogueRecord, Provenance, Role, SegRef, SegTarget, Segment, Severity, TaskMode, Turn,
};
use crate::curation::{ImageRecord, PromptKind};

/// Questions beyond this count are dropped from an instance-segmentation response.
pub const MAX_QUESTIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedInstSegQA {
    pub index: u32,
    pub question: String,
    /// `(instance_id, label_name)`; labels are taken from the annotations.
    pub answers: Vec<(u64, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InstSegParse {
    pub qas: Vec<ParsedInstSegQA>,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseOutcome {
    /// `None` when the response was rejected; the reason is in `diagnostics`.
    pub record: Option<DialogueRecord>,
    pub diagnostics: Vec<Diagnostic>,
}

struct Diags {
    image_id: u64,
    list: Vec<Diagnostic>,
}

impl Diags {
    fn new(image_id: u64) -> Self {
        Diags {
            image_id,
            list: Vec::new(),
        }
    }

    fn push(&mut self, severity: Severity, line: Option<usize>, message: impl Into<String>) {
        self.list.push(Diagnostic {
            image_id: self.image_id,
            severity,
            line,
            message: message.into(),
        });
    }

    fn error(&mut self, line: Option<usize>, message: impl Into<String>) {
        self.push(Severity::Error, line, message);
    }

    fn warn(&mut self, line: Option<usize>, message: impl Into<String>) {
        self.push(Severity::Warning, line, message);
    }
}

fn tag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<\s*(\d+)\s*;\s*([^<>;]*?)\s*>").expect("static regex"))
}

fn tag_cluster_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<\s*\d+\s*;[^<>;]*>(?:\s*<\s*\d+\s*;[^<>;]*>)*").expect("static regex"))
}

fn role_marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)<\s*(person|robot)\s*>\s*:").expect("static regex"))
}

fn qa_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*\**\s*([QA])\s*(\d+)\s*\**\s*:\s*\**\s*(.*)$").expect("static regex"))
}

fn answer_clause_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^instance\s+id\s+is\s*\[?\s*(\d+)\s*\]?\s*,\s*label\s+name\s+is\s*\[?\s*(.*?)\s*\]?\s*\.?$")
            .expect("static regex")
    })
}

fn line_at(text: &str, offset: usize, base_line: usize) -> usize {
    base_line + text[..offset].matches('\n').count()
}

/// Parses free text with `<id; label>` tags into segments. Unknown ids are
/// dropped with an error; label mismatches are warnings.
fn parse_tagged_text(
    role: Role,
    text: &str,
    base_line: usize,
    image: &ImageRecord,
    seen: &mut HashSet<u64>,
    diags: &mut Diags,
) -> Turn {
    let mut turn = Turn {
        role,
        segments: Vec::new(),
    };
    let mut cursor = 0;
    for cluster in tag_cluster_re().find_iter(text) {
        let line = line_at(text, cluster.start(), base_line);
        let (prefix, word) = split_surface(&text[cursor..cluster.start()]);
        let mut targets = Vec::new();
        for cap in tag_re().captures_iter(cluster.as_str()) {
            let Ok(id) = cap[1].parse::<u64>() else {
                diags.error(Some(line), format!("instance id '{}' is not a valid integer", &cap[1]));
                continue;
            };
            let Some(ann) = image.annotation(id) else {
                diags.error(Some(line), format!("unknown instance id {id}"));
                continue;
            };
            let label = cap[2].trim();
            if !label.eq_ignore_ascii_case(ann.label_name.trim()) {
                diags.warn(
                    Some(line),
                    format!("instance {id} is labelled '{label}' but annotated as '{}'", ann.label_name),
                );
            }
            if !seen.insert(id) {
                diags.warn(Some(line), format!("instance id {id} is referenced more than once"));
            }
            targets.push(SegTarget::instance(id, ann.label_name.clone()));
        }
        if targets.is_empty() {
            turn.push_text(prefix);
            turn.push_text(word);
        } else {
            turn.push_text(prefix);
            turn.segments.push(Segment::Ref(SegRef {
                surface: word.to_string(),
                targets,
            }));
        }
        cursor = cluster.end();
    }
    turn.push_text(&text[cursor..]);
    turn
}

struct QaItem {
    is_question: bool,
    index: u32,
    text: String,
    line: usize,
}

/// Collects `Qn:` / `An:` items; other lines continue the current item.
fn scan_qa(text: &str, diags: &mut Diags) -> Vec<QaItem> {
    let mut items: Vec<QaItem> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if let Some(cap) = qa_line_re().captures(line) {
            let Ok(index) = cap[2].parse::<u32>() else {
                diags.error(Some(line_no), format!("item number '{}' is out of range", &cap[2]));
                continue;
            };
            items.push(QaItem {
                is_question: &cap[1] == "Q",
                index,
                text: cap[3].to_string(),
                line: line_no,
            });
        } else if let Some(last) = items.last_mut() {
            last.text.push('\n');
            last.text.push_str(line);
        } else if !line.trim().is_empty() {
            diags.warn(Some(line_no), "text before the first Q/A item ignored");
        }
    }
    for item in &mut items {
        item.text = item.text.trim().to_string();
    }
    items
}

/// Parses `Qn:` questions and `An: instance id is .., label name is ..; ..` answers.
pub fn parse_instseg_response(text: &str, image: &ImageRecord) -> InstSegParse {
    let mut diags = Diags::new(image.image_id);
    if text.trim().is_empty() {
        diags.error(None, "empty response");
        return InstSegParse {
            qas: Vec::new(),
            diagnostics: diags.list,
        };
    }
    let items = scan_qa(text, &mut diags);

    let mut questions: Vec<&QaItem> = Vec::new();
    let mut answers: BTreeMap<u32, &QaItem> = BTreeMap::new();
    for item in &items {
        if item.is_question {
            if questions.iter().any(|q| q.index == item.index) {
                diags.error(Some(item.line), format!("duplicate question Q{}; first one kept", item.index));
            } else {
                questions.push(item);
            }
        } else {
            match answers.entry(item.index) {
                Entry::Occupied(_) => {
                    diags.error(Some(item.line), format!("duplicate answer A{}; first one kept", item.index));
                }
                Entry::Vacant(slot) => {
                    slot.insert(item);
                }
            }
        }
    }
    for a in answers.values() {
        if !questions.iter().any(|q| q.index == a.index) {
            diags.error(Some(a.line), format!("answer A{} has no matching question", a.index));
        }
    }
    if questions.len() > MAX_QUESTIONS {
        diags.warn(
            Some(questions[MAX_QUESTIONS].line),
            format!(
                "response has {} questions; only the first {MAX_QUESTIONS} are kept",
                questions.len()
            ),
        );
        questions.truncate(MAX_QUESTIONS);
    }

    let mut qas = Vec::new();
    for q in questions {
        if q.index == 0 {
            diags.error(Some(q.line), "question numbers start at 1");
            continue;
        }
        let Some(a) = answers.get(&q.index) else {
            diags.error(Some(q.line), format!("question Q{} has no answer", q.index));
            continue;
        };
        if q.text.is_empty() {
            diags.error(Some(q.line), format!("question Q{} is empty", q.index));
            continue;
        }
        if tag_re().is_match(&q.text) {
            diags.error(Some(q.line), format!("question Q{} contains an instance tag", q.index));
            continue;
        }
        let mut parsed = Vec::new();
        let mut unknown = Vec::new();
        let mut seen = HashSet::new();
        for clause in a.text.split(';').map(str::trim) {
            if clause.is_empty() || clause.chars().all(|c| c == '.') {
                continue;
            }
            let Some(cap) = answer_clause_re().captures(clause) else {
                diags.error(Some(a.line), format!("A{}: malformed answer clause '{clause}'", a.index));
                continue;
            };
            let Ok(id) = cap[1].parse::<u64>() else {
                diags.error(Some(a.line), format!("A{}: instance id '{}' is not a valid integer", a.index, &cap[1]));
                continue;
            };
            let Some(ann) = image.annotation(id) else {
                unknown.push(id);
                continue;
            };
            let label = cap[2].trim();
            if !label.eq_ignore_ascii_case(ann.label_name.trim()) {
                diags.warn(
                    Some(a.line),
                    format!("instance {id} is labelled '{label}' but annotated as '{}'", ann.label_name),
                );
            }
            if !seen.insert(id) {
                diags.warn(Some(a.line), format!("A{}: instance id {id} listed more than once", a.index));
            }
            parsed.push((id, ann.label_name.clone()));
        }
        if !unknown.is_empty() {
            let ids: Vec<String> = unknown.iter().map(u64::to_string).collect();
            diags.error(
                Some(a.line),
                format!("Q{} rejected: unknown instance id(s) {}", q.index, ids.join(", ")),
            );
            continue;
        }
        if parsed.is_empty() {
            diags.error(Some(a.line), format!("Q{} rejected: answer lists no instances", q.index));
            continue;
        }
        qas.push(ParsedInstSegQA {
            index: q.index,
            question: q.text.clone(),
            answers: parsed,
        });
    }
    InstSegParse {
        qas,
        diagnostics: diags.list,
    }
}

/// One instance-segmentation record per question; the answer is a bare run of
/// targets, rendered `<SEG> <SEG> ...` for training.
pub fn instseg_records(image_id: u64, qas: &[ParsedInstSegQA], provenance: Option<Provenance>) -> Vec<DialogueRecord> {
    qas.iter()
        .map(|qa| DialogueRecord {
            image_id,
            task_mode: TaskMode::Instseg,
            turns: vec![
                Turn::text(Role::Person, qa.question.clone()),
                Turn {
                    role: Role::Robot,
                    segments: vec![Segment::Ref(SegRef {
                        surface: String::new(),
                        targets: qa.answers.iter().map(|(id, l)| SegTarget::instance(*id, l.clone())).collect(),
                    })],
                },
            ],
            provenance: provenance.clone(),
        })
        .collect()
}

fn reject(diags: Diags) -> ParseOutcome {
    ParseOutcome {
        record: None,
        diagnostics: diags.list,
    }
}

/// Parses a `<person>: .. / <robot>: ..` dialogue with inline tags.
pub fn parse_sid_response(text: &str, image: &ImageRecord) -> ParseOutcome {
    let mut diags = Diags::new(image.image_id);
    if text.trim().is_empty() {
        diags.error(None, "empty response");
        return reject(diags);
    }
    let markers: Vec<_> = role_marker_re().captures_iter(text).collect();
    if markers.is_empty() {
        diags.error(None, "no <person>: or <robot>: markers found");
        return reject(diags);
    }
    let first = markers[0].get(0).map_or(0, |m| m.start());
    if !text[..first].trim().is_empty() {
        diags.warn(Some(1), "text before the first turn ignored");
    }

    // (role, body, line of the body start)
    let mut raw: Vec<(Role, &str, usize)> = Vec::new();
    for (i, cap) in markers.iter().enumerate() {
        let whole = cap.get(0).expect("match");
        let role = if cap[1].eq_ignore_ascii_case("person") {
            Role::Person
        } else {
            Role::Robot
        };
        let end = markers.get(i + 1).and_then(|c| c.get(0)).map_or(text.len(), |m| m.start());
        let body = &text[whole.end()..end];
        let lead = body.len() - body.trim_start().len();
        raw.push((role, body.trim(), line_at(text, whole.end() + lead, 1)));
    }
    let mut merged: Vec<(Role, String, usize)> = Vec::new();
    for (role, body, line) in raw {
        if body.is_empty() {
            diags.warn(Some(line), "empty turn ignored");
            continue;
        }
        match merged.last_mut() {
            Some(last) if last.0 == role => {
                diags.warn(Some(line), "consecutive turns of the same speaker merged");
                last.1.push('\n');
                last.1.push_str(body);
            }
            _ => merged.push((role, body.to_string(), line)),
        }
    }
    // Checked after dropping empty turns: an empty opening question counts as missing.
    if let Some((Role::Robot, _, line)) = merged.first() {
        diags.error(Some(*line), "dialogue does not start with <person>");
        return reject(diags);
    }
    if merged.last().is_some_and(|t| t.0 == Role::Person) {
        let line = merged.last().map(|t| t.2);
        diags.warn(line, "trailing question without reply dropped");
        merged.pop();
    }
    if merged.is_empty() {
        diags.error(None, "no complete exchange found");
        return reject(diags);
    }

    let mut turns = Vec::new();
    let mut seen = HashSet::new();
    for (role, body, line) in &merged {
        match role {
            Role::Person => {
                if let Some(m) = tag_re().find(body) {
                    diags.error(
                        Some(line_at(body, m.start(), *line)),
                        "person turn contains an instance tag; dialogue rejected",
                    );
                    return reject(diags);
                }
                turns.push(Turn::text(Role::Person, body.clone()));
            }
            Role::Robot => turns.push(parse_tagged_text(Role::Robot, body, *line, image, &mut seen, &mut diags)),
        }
    }
    ParseOutcome {
        record: Some(DialogueRecord {
            image_id: image.image_id,
            task_mode: TaskMode::SidInstseg,
            turns,
            provenance: Some(Provenance::of_response(PromptKind::Qa, text)),
        }),
        diagnostics: diags.list,
    }
}

/// Parses a single `Q1: .. / A1: ..` caption pair with inline tags in the answer.
pub fn parse_caption_response(text: &str, image: &ImageRecord) -> ParseOutcome {
    let mut diags = Diags::new(image.image_id);
    if text.trim().is_empty() {
        diags.error(None, "empty response");
        return reject(diags);
    }
    let items = scan_qa(text, &mut diags);
    let Some(q) = items.iter().find(|i| i.is_question) else {
        diags.error(None, "no Q1: line found");
        return reject(diags);
    };
    let Some(a) = items.iter().find(|i| !i.is_question && i.index == q.index) else {
        diags.error(Some(q.line), format!("question Q{} has no answer", q.index));
        return reject(diags);
    };
    let questions = items.iter().filter(|i| i.is_question).count();
    if questions > 1 || items.len() > 2 {
        diags.warn(
            items.iter().find(|i| i.line != q.line && i.line != a.line).map(|i| i.line),
            format!("expected one Q/A pair, found {} items; only the first pair is kept", items.len()),
        );
    }
    if q.text.is_empty() || a.text.is_empty() {
        diags.error(Some(q.line), "empty question or answer");
        return reject(diags);
    }
    if tag_re().is_match(&q.text) {
        diags.error(Some(q.line), "question contains an instance tag; caption rejected");
        return reject(diags);
    }
    let mut seen = HashSet::new();
    let answer = parse_tagged_text(Role::Robot, &a.text, a.line, image, &mut seen, &mut diags);
    ParseOutcome {
        record: Some(DialogueRecord {
            image_id: image.image_id,
            task_mode: TaskMode::SidInstseg,
            turns: vec![Turn::text(Role::Person, q.text.clone()), answer],
            provenance: Some(Provenance::of_response(PromptKind::Caption, text)),
        }),
        diagnostics: diags.list,
    }
}

/// Parses a response of the given kind into zero or more records.
pub fn parse_response(kind: PromptKind, text: &str, image: &ImageRecord) -> (Vec<DialogueRecord>, Vec<Diagnostic>) {
    match kind {
        PromptKind::Instseg => {
            let parsed = parse_instseg_response(text, image);
            let provenance = Provenance::of_response(PromptKind::Instseg, text);
            (
                instseg_records(image.image_id, &parsed.qas, Some(provenance)),
                parsed.diagnostics,
            )
        }
        PromptKind::Qa | PromptKind::Caption => {
            let out = if kind == PromptKind::Qa {
                parse_sid_response(text, image)
            } else {
                parse_caption_response(text, image)
            };
            (out.record.into_iter().collect(), out.diagnostics)
        }
    }
}
