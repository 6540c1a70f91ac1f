//! Dialogue records with inline segmentation references, their three text
//! renderings, and the parsers for model responses.

mod response;

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curation::PromptKind;
use crate::error::{Error, Result};

pub use response::{
    instseg_records, parse_caption_response, parse_instseg_response, parse_response, parse_sid_response, InstSegParse,
    ParseOutcome, ParsedInstSegQA,
};

pub const SEG_TOKEN: &str = "<SEG>";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Person,
    Robot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    Semseg,
    Instseg,
    SidSemseg,
    SidInstseg,
    PureText,
}

impl TaskMode {
    pub const ALL: [TaskMode; 5] = [
        TaskMode::Semseg,
        TaskMode::Instseg,
        TaskMode::SidSemseg,
        TaskMode::SidInstseg,
        TaskMode::PureText,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskMode::Semseg => "semseg",
            TaskMode::Instseg => "instseg",
            TaskMode::SidSemseg => "sid_semseg",
            TaskMode::SidInstseg => "sid_instseg",
            TaskMode::PureText => "pure_text",
        }
    }
}

impl std::fmt::Display for TaskMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One mask target. Instance records carry one id per target; after
/// category merging a target carries every merged instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegTarget {
    pub ids: Vec<u64>,
    pub label: String,
}

impl SegTarget {
    pub fn instance(id: u64, label: impl Into<String>) -> Self {
        SegTarget {
            ids: vec![id],
            label: label.into(),
        }
    }
}

/// A noun (the surface) followed by one or more mask targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegRef {
    /// The word the tags are attached to; empty when the tags stand alone.
    pub surface: String,
    pub targets: Vec<SegTarget>,
}

impl SegRef {
    pub fn instance_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.targets.iter().flat_map(|t| t.ids.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Text(String),
    Ref(SegRef),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub role: Role,
    pub segments: Vec<Segment>,
}

impl Turn {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        let mut turn = Turn {
            role,
            segments: Vec::new(),
        };
        turn.push_text(&text.into());
        turn
    }

    /// Appends text, merging with a trailing text segment.
    pub fn push_text(&mut self, text: &str) {
        if text.is_empty() {
            return;
        }
        if let Some(Segment::Text(last)) = self.segments.last_mut() {
            last.push_str(text);
        } else {
            self.segments.push(Segment::Text(text.to_string()));
        }
    }

    pub fn refs(&self) -> impl Iterator<Item = &SegRef> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Ref(r) => Some(r),
            Segment::Text(_) => None,
        })
    }

    pub fn render(&self, style: RenderStyle) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Ref(r) => {
                    out.push_str(&r.surface);
                    if style == RenderStyle::Pure {
                        continue;
                    }
                    let tags: Vec<String> = match style {
                        RenderStyle::Tagged => r
                            .targets
                            .iter()
                            .flat_map(|t| t.ids.iter().map(move |id| format!("<{id}; {}>", t.label)))
                            .collect(),
                        _ => r.targets.iter().map(|_| SEG_TOKEN.to_string()).collect(),
                    };
                    if !r.surface.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(&tags.join(" "));
                }
            }
        }
        out
    }
}

/// How segmentation references appear in text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderStyle {
    /// `keyboards <34494; keyboard> <31264; keyboard>`, the response format.
    Tagged,
    /// `keyboards <SEG> <SEG>`, the training format.
    Training,
    /// `keyboards`
    Pure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub prompt_kind: PromptKind,
    /// Lowercase hex SHA-256 of the raw model response.
    pub response_hash: String,
}

impl Provenance {
    pub fn of_response(prompt_kind: PromptKind, response: &str) -> Self {
        Provenance {
            prompt_kind,
            response_hash: hex::encode(Sha256::digest(response.as_bytes())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueRecord {
    pub image_id: u64,
    pub task_mode: TaskMode,
    pub turns: Vec<Turn>,
    pub provenance: Option<Provenance>,
}

impl DialogueRecord {
    pub fn instance_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.turns.iter().flat_map(|t| t.refs()).flat_map(SegRef::instance_ids)
    }

    /// Number of `<SEG>` tokens in the training rendering.
    pub fn seg_count(&self) -> usize {
        self.turns.iter().flat_map(|t| t.refs()).map(|r| r.targets.len()).sum()
    }

    /// `<person>: ...` / `<robot>: ...` lines in the given style.
    pub fn render_dialogue(&self, style: RenderStyle) -> String {
        self.turns
            .iter()
            .map(|t| {
                let tag = match t.role {
                    Role::Person => "<person>",
                    Role::Robot => "<robot>",
                };
                format!("{tag}: {}", t.render(style))
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn to_serialized(&self) -> SerializedRecord {
        to_training_record(self)
    }
}

/// `seg_ids` entry: a bare id for one instance, a list for a merged target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SegIds {
    One(u64),
    Many(Vec<u64>),
}

impl SegIds {
    fn from_ids(ids: &[u64]) -> Self {
        match ids {
            [one] => SegIds::One(*one),
            many => SegIds::Many(many.to_vec()),
        }
    }

    pub fn ids(&self) -> Vec<u64> {
        match self {
            SegIds::One(id) => vec![*id],
            SegIds::Many(ids) => ids.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SerializedTurn {
    pub role: Role,
    pub text: String,
    /// The k-th `<SEG>` in `text` is the k-th entry.
    pub seg_ids: Vec<SegIds>,
    #[serde(default)]
    pub seg_labels: Vec<String>,
}

/// On-disk form of a record: one JSON object per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SerializedRecord {
    pub schema_version: u32,
    pub image_id: u64,
    pub task_mode: TaskMode,
    pub turns: Vec<SerializedTurn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// Replaces every reference by its surface plus one `<SEG>` per target.
pub fn to_training_record(record: &DialogueRecord) -> SerializedRecord {
    let turns = record
        .turns
        .iter()
        .map(|t| SerializedTurn {
            role: t.role,
            text: t.render(RenderStyle::Training),
            seg_ids: t.refs().flat_map(|r| r.targets.iter().map(|x| SegIds::from_ids(&x.ids))).collect(),
            seg_labels: t.refs().flat_map(|r| r.targets.iter().map(|x| x.label.clone())).collect(),
        })
        .collect();
    SerializedRecord {
        schema_version: SCHEMA_VERSION,
        image_id: record.image_id,
        task_mode: record.task_mode,
        turns,
        provenance: record.provenance.clone(),
    }
}

fn seg_cluster_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<SEG>(?:\s*<SEG>)*").expect("static regex"))
}

/// Splits `before` into the text preceding the surface word and the word itself.
pub(crate) fn split_surface(before: &str) -> (&str, &str) {
    let trimmed = before.trim_end();
    let start = trimmed
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_whitespace())
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(0);
    (&trimmed[..start], &trimmed[start..])
}

fn turn_from_training_text(t: &SerializedTurn) -> std::result::Result<Turn, String> {
    if t.seg_labels.len() != t.seg_ids.len() {
        return Err(format!(
            "{} seg_ids but {} seg_labels",
            t.seg_ids.len(),
            t.seg_labels.len()
        ));
    }
    let mut turn = Turn {
        role: t.role,
        segments: Vec::new(),
    };
    let mut cursor = 0;
    let mut next = 0;
    for m in seg_cluster_re().find_iter(&t.text) {
        let (prefix, word) = split_surface(&t.text[cursor..m.start()]);
        turn.push_text(prefix);
        let n = m.as_str().matches(SEG_TOKEN).count();
        if next + n > t.seg_ids.len() {
            return Err(format!("text has more <SEG> tokens than the {} seg_ids", t.seg_ids.len()));
        }
        let targets = (next..next + n)
            .map(|k| SegTarget {
                ids: t.seg_ids[k].ids(),
                label: t.seg_labels[k].clone(),
            })
            .collect();
        next += n;
        turn.segments.push(Segment::Ref(SegRef {
            surface: word.to_string(),
            targets,
        }));
        cursor = m.end();
    }
    turn.push_text(&t.text[cursor..]);
    if next != t.seg_ids.len() {
        return Err(format!("text has {next} <SEG> tokens but {} seg_ids", t.seg_ids.len()));
    }
    if t.seg_ids.iter().any(|s| s.ids().is_empty()) {
        return Err("empty seg_ids group".into());
    }
    Ok(turn)
}

impl SerializedRecord {
    /// Rebuilds the structured record; `<SEG>` tokens are attached to the
    /// word before them.
    pub fn to_record(&self) -> std::result::Result<DialogueRecord, String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!("unsupported schema_version {}", self.schema_version));
        }
        let turns = self
            .turns
            .iter()
            .enumerate()
            .map(|(i, t)| turn_from_training_text(t).map_err(|e| format!("turn {i}: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(DialogueRecord {
            image_id: self.image_id,
            task_mode: self.task_mode,
            turns,
            provenance: self.provenance.clone(),
        })
    }
}

impl TryFrom<&SerializedRecord> for DialogueRecord {
    type Error = Error;

    fn try_from(value: &SerializedRecord) -> Result<Self> {
        value.to_record().map_err(|message| Error::Schema {
            path: Default::default(),
            line: 0,
            message,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

/// A problem found while parsing one response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub image_id: u64,
    pub severity: Severity,
    /// 1-based line in the response text.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    pub message: String,
}
