use serde::{Deserialize, Serialize};

use super::{ImageRecord, InstanceAnnotation};
use crate::error::{Error, Result};

/// System message for reasoning instance segmentation question generation.
pub const INSTSEG_SYSTEM_TEMPLATE: &str = "You are asked to generate the instruction tuning data for language-guided reasoning instance segmentation. Requirements are:
(1) Create a series of specific questions (Q1, Q2, Q3, etc.)(but no more than 5 questions) focusing on identifying and isolating different elements within the image, based on the polygon information. Each question should not refer to previous questions, and facilitate the generation of segmented masks for objects when processed by an imaging system. Ensure the questions are clear, precise, logical, and interesting, and avoid directly mentioning coordinates, label names, and polygons. The questions should try to consider the use and nature of the object, not just its appearance. The output format must be 'Q[number]: [question]'. If the question is about humans, do not ask questions without extra modifiers, but ask questions simply like 'Please find out all the individuals in the image.'
(2) Answer all your questions (A1, A2, A3, etc.) indicating which polygons in <anno> correspond to each question. For items with multiple instances in the same category, list ALL instances for that category in the answer! Do not output full information; the format MUST follow: 'A[number]: instance id is [id1], label name is [name]; instance id is [id2], label name is [name]; instance id is [id3], label name is [name]; ...'";

/// System message for conversational Q&A with inline segmentation references.
pub const QA_SYSTEM_TEMPLATE: &str = "You are asked to generate the Q&A conversational data. Requirements are:
(1) Construct a dialogue that paints a vivid picture of the scene through natural and diverse questions and answers, ensuring a logical and engaging flow.
(2) The context of the dialogue can be relevant. Include interactions that cover object identification, counting, actions, locations, and the relationship between objects, while also integrating complex queries that delve into the objects' background information and the scenario depicted in the image.
(3) Carefully formulate questions to avoid ambiguity and ensure they can be answered with confidence based on the image annotations. Avoid including <instance id; label name> in <person>'s queries. Do not directly mention 'polygon', or 'annotations' in the questions and answers.
(4) Format the output as:
'<person>: XXXX
<robot>: XXXX'
, with <robot> responses incorporating instance IDs and label names like 'keyboards <34494; keyboard> <31264; keyboard>'.";

/// System message for captioning with inline segmentation references.
/// `{image_size}` is replaced by `(width, height)`.
pub const CAPTION_SYSTEM_TEMPLATE: &str = "You are asked to generate the captioning conversational data.
Please generate one question-and-answer pair based on the provided image (image_size: {image_size}) and its instance segmentation annotation. The focus is on describing(captioning) the whole image focusing on those instances given in the annotation, as detailedly as you can without directly referencing anything in the annotation except for instance id. Make sure the answers indicate the specific instances involved. The annotation consists of struct {'label name', 'instance id', 'bbox', 'center point'} that each is corresponded with a unique instance in the image (segmentation mask is given in the form of bbox[left, top, right, bottom] and 'center_point' is the center of the instance. x-coordinates are increasing from left to right. y-coordinates are increasing from top to bottom! The more the instance is close to the TOP edge, the SMALLER the y-coordinate is.
Please assume that you are in a space where point1 [0, 0] is to the upper left of point2 [1, 1], and point2 [1, 1] is to the bottom right of point1 [0, 0]. The starting point [0, 0] is on the top-left of the given image. The generated QA should follow the format of:
'Q1: <question>.
A1: <descriptions>'";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Instseg,
    Qa,
    Caption,
}

impl PromptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Instseg => "instseg",
            PromptKind::Qa => "qa",
            PromptKind::Caption => "caption",
        }
    }
}

impl std::str::FromStr for PromptKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "instseg" => Ok(PromptKind::Instseg),
            "qa" => Ok(PromptKind::Qa),
            "caption" => Ok(PromptKind::Caption),
            other => Err(format!("unknown task '{other}' (expected instseg, qa or caption)")),
        }
    }
}

impl std::fmt::Display for PromptKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub image_id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

/// A fully rendered request for the external model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptJob {
    pub kind: PromptKind,
    pub image_ref: ImageRef,
    pub prompt_text: String,
    pub annotation_digest: String,
}

/// `label name is cat, instance id is 7, bbox is [10, 20, 30, 40], center point is [20, 30]`
pub fn digest_line(a: &InstanceAnnotation) -> String {
    format!(
        "label name is {}, instance id is {}, bbox is [{}, {}, {}, {}], center point is [{}, {}]",
        a.label_name,
        a.instance_id,
        a.bbox.left,
        a.bbox.top,
        a.bbox.right,
        a.bbox.bottom,
        a.center_point.0,
        a.center_point.1
    )
}

pub fn build_prompt(kind: PromptKind, image: &ImageRecord) -> Result<PromptJob> {
    if image.annotations.is_empty() {
        return Err(Error::NoAnnotations(image.image_id));
    }
    let digest = image.annotations.iter().map(digest_line).collect::<Vec<_>>().join("\n");
    let system = match kind {
        PromptKind::Instseg => INSTSEG_SYSTEM_TEMPLATE.to_string(),
        PromptKind::Qa => QA_SYSTEM_TEMPLATE.to_string(),
        PromptKind::Caption => {
            CAPTION_SYSTEM_TEMPLATE.replace("{image_size}", &format!("({}, {})", image.width, image.height))
        }
    };
    Ok(PromptJob {
        kind,
        image_ref: ImageRef {
            image_id: image.image_id,
            file_name: image.file_name.clone(),
            width: image.width,
            height: image.height,
        },
        prompt_text: format!("{system}\n\n<anno>\n{digest}\n</anno>"),
        annotation_digest: digest,
    })
}

pub fn build_instseg_prompt(image: &ImageRecord) -> Result<PromptJob> {
    build_prompt(PromptKind::Instseg, image)
}

pub fn build_qa_prompt(image: &ImageRecord) -> Result<PromptJob> {
    build_prompt(PromptKind::Qa, image)
}

pub fn build_caption_prompt(image: &ImageRecord) -> Result<PromptJob> {
    build_prompt(PromptKind::Caption, image)
}
