//! Prompt construction for the text and vision planners.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::oracle::{Oracle, TaskSpec};
use crate::plan::emit_plans;
use crate::scene::{AnnotationRecord, LabelEnum, ObjectAnnotation};

const BUILTIN_EXEMPLARS: &str = include_str!("../../fixtures/exemplars.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptMode {
    ZeroShot,
    FewShot,
}

impl PromptMode {
    pub const ALL: [PromptMode; 2] = [PromptMode::ZeroShot, PromptMode::FewShot];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::ZeroShot => "zero-shot",
            PromptMode::FewShot => "few-shot",
        }
    }

    /// "Z" or "F", as used in report method labels.
    pub fn letter(self) -> char {
        match self {
            PromptMode::ZeroShot => 'Z',
            PromptMode::FewShot => 'F',
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().replace('_', "-").as_str() {
            "zero-shot" | "zero" | "z" => Ok(PromptMode::ZeroShot),
            "few-shot" | "few" | "f" => Ok(PromptMode::FewShot),
            other => Err(format!("unknown prompt mode '{other}'")),
        }
    }
}

/// What the planner is shown alongside the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Image,
    Caption,
}

/// The four reasoning steps, in the order the planner should take them.
pub const COT_STEPS: [&str; 4] = [
    "Use commonsense knowledge to reason about the state of each object (intact, peel, leftover food, clean, dirty, or containing leftover food).",
    "According to the object's state and the user's preference, decide the destination of the object (trash bin, fridge, cupboard, dishwasher). If the instruction does not say what to do with leftover food, the destination is uncertain.",
    "According to the object's state, shape and size, decide the grasping type (top grasp or edge grasp).",
    "According to the object's state and destination, decide the placing type (place or pour).",
];

const OUTPUT_FORMAT: &str = r#"Answer with one JSON object. Use one key per object on the table; if a category occurs more than once, add the number behind the name ("plate 1", "plate 2"). Each value has exactly these fields:
"object_name": {
    "color": "value1",
    "size": "value2",
    "shape": "value3",
    "container": true or false,
    "state": "value5",
    "destination": "value6",
    "grasping_type": "value7",
    "placing_type": "value8"
  }"#;

/// What the planner is asked to return.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputSchema {
    /// Every plan field per object.
    #[default]
    FullPlan,
    /// Only each object's state, for state-detection-only evaluation.
    StateOnly,
}

impl FromStr for OutputSchema {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().replace('_', "-").as_str() {
            "full" | "full-plan" => Ok(OutputSchema::FullPlan),
            "state" | "state-only" => Ok(OutputSchema::StateOnly),
            other => Err(format!("unknown output schema '{other}'")),
        }
    }
}

const STATE_ONLY_FORMAT: &str = r#"Answer with one JSON object. Use one key per object on the table; if a category occurs more than once, add the number behind the name ("plate 1", "plate 2"). Each value has exactly one field:
"object_name": {
    "state": "value"
  }"#;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exemplar {
    pub description: String,
    pub object: ObjectAnnotation,
}

#[derive(Deserialize)]
struct ExemplarDoc {
    #[allow(dead_code)]
    version: String,
    exemplars: Vec<ExemplarEntry>,
}

#[derive(Deserialize)]
struct ExemplarEntry {
    description: String,
    object: indexmap::IndexMap<String, AnnotationRecord>,
}

impl Exemplar {
    pub fn builtin() -> &'static [Exemplar] {
        static EXEMPLARS: OnceLock<Vec<Exemplar>> = OnceLock::new();
        EXEMPLARS.get_or_init(|| Exemplar::from_json(BUILTIN_EXEMPLARS).expect("builtin exemplars are valid"))
    }

    pub fn from_json(text: &str) -> Result<Vec<Exemplar>, serde_json::Error> {
        let doc: ExemplarDoc = serde_json::from_str(text)?;
        Ok(doc
            .exemplars
            .into_iter()
            .flat_map(|e| {
                let description = e.description;
                e.object
                    .into_iter()
                    .map(move |(name, r)| Exemplar { description: description.clone(), object: ObjectAnnotation::from_record(name, r) })
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSpec {
    pub task: TaskSpec,
    pub mode: PromptMode,
    pub cot_steps: [&'static str; 4],
    /// Empty for zero-shot.
    pub exemplars: Vec<Exemplar>,
    pub schema: OutputSchema,
}

impl PromptSpec {
    /// Builtin reasoning steps; few-shot gets the builtin exemplars.
    pub fn new(task: TaskSpec, mode: PromptMode) -> Self {
        let exemplars = match mode {
            PromptMode::ZeroShot => Vec::new(),
            PromptMode::FewShot => Exemplar::builtin().to_vec(),
        };
        PromptSpec { task, mode, cot_steps: COT_STEPS, exemplars, schema: OutputSchema::FullPlan }
    }

    pub fn with_schema(mut self, schema: OutputSchema) -> Self {
        self.schema = schema;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("few-shot prompt needs at least one exemplar")]
    MissingExemplars,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub text: String,
    pub attach_image: bool,
}

impl Prompt {
    /// Hex SHA-256 of the text, recorded in run traces.
    pub fn hash(&self) -> String {
        Sha256::digest(self.text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn build_prompt(oracle: &Oracle, spec: &PromptSpec, input: InputKind) -> Result<Prompt, PromptError> {
    if spec.mode == PromptMode::FewShot && spec.exemplars.is_empty() {
        return Err(PromptError::MissingExemplars);
    }
    let mut text = String::new();
    text.push_str("You are the task planner of a household robot that clears tables. ");
    text.push_str(match input {
        InputKind::Image => "You are given a photo of the table.",
        InputKind::Caption => "You are given a description of the objects on the table.",
    });
    text.push_str(" For every object, produce an object manipulation plan.\n\n");
    text.push_str("User instruction: ");
    text.push_str(&spec.task.instruction);
    text.push_str("\n\nThink step by step:\n");
    for (i, step) in spec.cot_steps.iter().enumerate() {
        text.push_str(&format!("{}. {step}\n", i + 1));
    }
    text.push('\n');
    text.push_str(match spec.schema {
        OutputSchema::FullPlan => OUTPUT_FORMAT,
        OutputSchema::StateOnly => STATE_ONLY_FORMAT,
    });
    text.push('\n');
    if spec.mode == PromptMode::FewShot {
        text.push_str("\nExamples:\n");
        for ex in &spec.exemplars {
            text.push_str(&format!("\nScene: {}\nAnswer:\n", ex.description));
            // exemplar answers follow the current task's rules
            let answer = match (spec.schema, oracle.ground_truth_plan(&ex.object, &spec.task)) {
                (OutputSchema::FullPlan, Ok(p)) => emit_plans(&[p.to_omp(&ex.object)]),
                (OutputSchema::StateOnly, _) => {
                    let doc = serde_json::json!({ ex.object.name.clone(): { "state": ex.object.state.as_str() } });
                    serde_json::to_string_pretty(&doc).expect("json value serializes")
                }
                (_, Err(_)) => emit_plans(&[]),
            };
            text.push_str(&answer);
            text.push('\n');
        }
    }
    Ok(Prompt { text, attach_image: input == InputKind::Image })
}
