//! Object manipulation plans: the typed record, value normalization, the
//! canonical emitter, and tolerant extraction/parsing of model output.

mod extract;
mod jsonish;
mod parse;

use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use extract::{extract_structured_block, has_unclosed_brace, Block, ExtractError};
pub use jsonish::{parse_jsonish, Entry, Node, Repair, SyntaxError};
pub use parse::{parse_model_output, parse_plans, MalformedBlock, ParseReport, ParseWarning, PlanParseError};

use crate::labels::{canonicalize_label, SynonymTable};
use crate::scene::{Destination, GraspType, LabelEnum, ObjectState, PlaceType, ShapeClass, SizeClass};

/// A plan field value that is either canonical or the `Unknown` sentinel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Field<T> {
    Known(T),
    Unknown,
}

impl<T> Field<T> {
    pub fn known(&self) -> Option<&T> {
        match self {
            Field::Known(v) => Some(v),
            Field::Unknown => None,
        }
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self, Field::Unknown)
    }
}

impl<T: PartialEq> Field<T> {
    /// `Unknown` never matches anything.
    pub fn is(&self, value: &T) -> bool {
        matches!(self, Field::Known(v) if v == value)
    }
}

impl<T: Copy> Field<T> {
    pub fn get(&self) -> Option<T> {
        self.known().copied()
    }
}

impl<T> From<Option<T>> for Field<T> {
    fn from(v: Option<T>) -> Self {
        v.map_or(Field::Unknown, Field::Known)
    }
}

impl<T: Serialize> Serialize for Field<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Field::Known(v) => v.serialize(serializer),
            Field::Unknown => serializer.serialize_none(),
        }
    }
}

impl<'de, T: DeserializeOwned> Deserialize<'de> for Field<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Ok(Option::<T>::deserialize(deserializer)?.into())
    }
}

/// One object's plan as produced by a backend.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectManipulationPlan {
    pub name: String,
    pub color: Field<String>,
    pub size: Field<SizeClass>,
    pub shape: Field<ShapeClass>,
    pub container: Field<bool>,
    pub state: Field<ObjectState>,
    pub destination: Field<Destination>,
    pub grasping_type: Field<GraspType>,
    pub placing_type: Field<PlaceType>,
    /// Source text the plan was parsed from; ignored by equality.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub raw_source: String,
}

impl PartialEq for ObjectManipulationPlan {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.color == other.color
            && self.size == other.size
            && self.shape == other.shape
            && self.container == other.container
            && self.state == other.state
            && self.destination == other.destination
            && self.grasping_type == other.grasping_type
            && self.placing_type == other.placing_type
    }
}

impl ObjectManipulationPlan {
    /// A plan with every field unknown.
    pub fn unknown(name: impl Into<String>) -> Self {
        ObjectManipulationPlan {
            name: name.into(),
            color: Field::Unknown,
            size: Field::Unknown,
            shape: Field::Unknown,
            container: Field::Unknown,
            state: Field::Unknown,
            destination: Field::Unknown,
            grasping_type: Field::Unknown,
            placing_type: Field::Unknown,
            raw_source: String::new(),
        }
    }
}

/// The eight per-object plan fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PlanField {
    Color,
    Size,
    Shape,
    Container,
    State,
    Destination,
    GraspingType,
    PlacingType,
}

impl PlanField {
    pub const ALL: [PlanField; 8] = [
        PlanField::Color,
        PlanField::Size,
        PlanField::Shape,
        PlanField::Container,
        PlanField::State,
        PlanField::Destination,
        PlanField::GraspingType,
        PlanField::PlacingType,
    ];

    /// Key used in the plan/annotation document format.
    pub fn key(self) -> &'static str {
        match self {
            PlanField::Color => "color",
            PlanField::Size => "size",
            PlanField::Shape => "shape",
            PlanField::Container => "container",
            PlanField::State => "state",
            PlanField::Destination => "destination",
            PlanField::GraspingType => "grasping_type",
            PlanField::PlacingType => "placing_type",
        }
    }

    /// Recognize a field key as written by a model ("Grasping Type", "grasp", ...).
    pub fn from_key(raw: &str) -> Option<PlanField> {
        let token = canonicalize_label(raw).ok()?.token;
        Some(match token.as_str() {
            "color" | "colour" => PlanField::Color,
            "size" => PlanField::Size,
            "shape" => PlanField::Shape,
            "container" | "is container" => PlanField::Container,
            "state" | "object state" | "condition" => PlanField::State,
            "destination" | "target location" | "target" | "location" => PlanField::Destination,
            "grasping type" | "grasp type" | "grasp" | "grasping" | "grasping action" => {
                PlanField::GraspingType
            }
            "placing type" | "place type" | "placing" | "placement" | "placing action" => {
                PlanField::PlacingType
            }
            _ => return None,
        })
    }
}

impl fmt::Display for PlanField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Result of normalizing a single free-text value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NormalizedValue {
    Color(String),
    Size(SizeClass),
    Shape(ShapeClass),
    Container(bool),
    State(ObjectState),
    Destination(Destination),
    GraspingType(GraspType),
    PlacingType(PlaceType),
    Unknown,
}

/// Canonicalize `raw` and map it into `field`'s closed vocabulary.
/// Never fails: anything unrecognized becomes `Unknown`.
pub fn normalize_value(field: PlanField, raw: &str) -> NormalizedValue {
    use NormalizedValue as N;
    fn to<E>(f: Field<E>, wrap: fn(E) -> NormalizedValue) -> NormalizedValue {
        match f {
            Field::Known(v) => wrap(v),
            Field::Unknown => NormalizedValue::Unknown,
        }
    }
    match field {
        PlanField::Color => normalize_color(raw).map_or(N::Unknown, N::Color),
        PlanField::Size => to(normalize_enum::<SizeClass>(field, raw), N::Size),
        PlanField::Shape => to(normalize_enum::<ShapeClass>(field, raw), N::Shape),
        PlanField::Container => normalize_bool(raw).map_or(N::Unknown, N::Container),
        PlanField::State => to(normalize_enum::<ObjectState>(field, raw), N::State),
        PlanField::Destination => to(normalize_enum::<Destination>(field, raw), N::Destination),
        PlanField::GraspingType => to(normalize_enum::<GraspType>(field, raw), N::GraspingType),
        PlanField::PlacingType => to(normalize_enum::<PlaceType>(field, raw), N::PlacingType),
    }
}

pub(crate) fn normalize_enum<E: LabelEnum>(field: PlanField, raw: &str) -> Field<E> {
    let Ok(label) = canonicalize_label(raw) else {
        return Field::Unknown;
    };
    if let Some(v) = E::parse_exact(&label.token) {
        return Field::Known(v);
    }
    SynonymTable::builtin()
        .field_synonym(field.key(), &label.token)
        .and_then(E::parse_exact)
        .into()
}

pub(crate) fn normalize_bool(raw: &str) -> Option<bool> {
    let token = canonicalize_label(raw).ok()?.token;
    let token = SynonymTable::builtin()
        .field_synonym(PlanField::Container.key(), &token)
        .map(str::to_string)
        .unwrap_or(token);
    match token.as_str() {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

pub(crate) fn normalize_color(raw: &str) -> Option<String> {
    canonicalize_label(raw).ok().map(|l| l.token)
}

/// Render plans in the canonical document format: one keyed record per
/// object with the eight plan fields in fixed order; unknown fields are null.
pub fn emit_plans(plans: &[ObjectManipulationPlan]) -> String {
    let mut doc = serde_json::Map::new();
    for p in plans {
        doc.insert(p.name.clone(), plan_record(p));
    }
    serde_json::to_string_pretty(&serde_json::Value::Object(doc)).expect("plans serialize")
}

fn plan_record(p: &ObjectManipulationPlan) -> serde_json::Value {
    fn text<T: fmt::Display>(f: &Field<T>) -> serde_json::Value {
        match f {
            Field::Known(v) => serde_json::Value::String(v.to_string()),
            Field::Unknown => serde_json::Value::Null,
        }
    }
    let mut record = serde_json::Map::new();
    record.insert("color".into(), text(&p.color));
    record.insert("size".into(), text(&p.size));
    record.insert("shape".into(), text(&p.shape));
    record.insert(
        "container".into(),
        match p.container {
            Field::Known(b) => serde_json::Value::Bool(b),
            Field::Unknown => serde_json::Value::Null,
        },
    );
    record.insert("state".into(), text(&p.state));
    record.insert("destination".into(), text(&p.destination));
    record.insert("grasping_type".into(), text(&p.grasping_type));
    record.insert("placing_type".into(), text(&p.placing_type));
    serde_json::Value::Object(record)
}
