//! Annotated tabletop scenes and datasets.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexMap;
use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::labels::canonicalize_label;

/// Error returned when a string is not one of an enumeration's forms.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("'{value}' is not a valid {kind}")]
pub struct EnumParseError {
    pub kind: &'static str,
    pub value: String,
}

/// Closed string enumerations used by annotations and plans.
pub trait LabelEnum: Copy + Eq + fmt::Debug + 'static {
    const KIND: &'static str;
    const ALL: &'static [Self];
    fn as_str(self) -> &'static str;

    fn parse_exact(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|v| v.as_str() == s)
    }
}

macro_rules! label_enum {
    ($(#[$meta:meta])* $name:ident, $kind:literal { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl LabelEnum for $name {
            const KIND: &'static str = $kind;
            const ALL: &'static [Self] = &[$($name::$variant),+];
            fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = EnumParseError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::parse_exact(s).ok_or_else(|| EnumParseError { kind: $kind, value: s.to_string() })
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(de::Error::custom)
            }
        }
    };
}

label_enum!(SizeClass, "size" {
    Small => "small",
    Medium => "medium",
    Big => "big",
});

label_enum!(ShapeClass, "shape" {
    Elongated => "elongated",
    Irregular => "irregular",
    Oval => "oval",
    Round => "round",
    Spherical => "spherical",
    Cylindrical => "cylindrical",
    Rectangle => "rectangle",
});

label_enum!(
    /// Physical condition of an object.
    ObjectState, "state" {
    Clean => "clean",
    Dirty => "dirty",
    ContainingLeftoverFood => "containing leftover food",
    Intact => "intact",
    Peel => "peel",
    LeftoverFood => "leftover food",
});

label_enum!(
    /// Where an object goes. `Uncertain` only ever appears in plans.
    Destination, "destination" {
    TrashBin => "trash bin",
    Fridge => "fridge",
    Cupboard => "cupboard",
    Dishwasher => "dishwasher",
    Uncertain => "uncertain",
});

label_enum!(GraspType, "grasping type" {
    TopGrasp => "top grasp",
    EdgeGrasp => "edge grasp",
});

label_enum!(PlaceType, "placing type" {
    Place => "place",
    Pour => "pour",
});

impl ObjectState {
    pub const CONTAINER_STATES: &'static [ObjectState] =
        &[ObjectState::Clean, ObjectState::Dirty, ObjectState::ContainingLeftoverFood];
    pub const EDIBLE_STATES: &'static [ObjectState] =
        &[ObjectState::Intact, ObjectState::Peel, ObjectState::LeftoverFood];
    pub const INEDIBLE_STATES: &'static [ObjectState] = &[ObjectState::Clean, ObjectState::Dirty];

    /// States permitted for an object with the given container/edible flags.
    pub fn allowed_for(container: bool, edible: bool) -> &'static [ObjectState] {
        match (container, edible) {
            (true, _) => Self::CONTAINER_STATES,
            (false, true) => Self::EDIBLE_STATES,
            (false, false) => Self::INEDIBLE_STATES,
        }
    }
}

/// One annotated object. Field order matches the dataset file format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectAnnotation {
    pub name: String,
    pub color: String,
    pub size: SizeClass,
    pub shape: ShapeClass,
    pub container: bool,
    pub state: ObjectState,
    pub destination: Destination,
    pub grasping_type: GraspType,
    pub placing_type: PlaceType,
    pub edible: bool,
}

/// The keyed record stored under an object name in a dataset file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub color: String,
    pub size: SizeClass,
    pub shape: ShapeClass,
    pub container: bool,
    pub state: ObjectState,
    pub destination: Destination,
    pub grasping_type: GraspType,
    pub placing_type: PlaceType,
    pub edible: bool,
}

impl ObjectAnnotation {
    pub fn from_record(name: impl Into<String>, r: AnnotationRecord) -> Self {
        ObjectAnnotation {
            name: name.into(),
            color: r.color,
            size: r.size,
            shape: r.shape,
            container: r.container,
            state: r.state,
            destination: r.destination,
            grasping_type: r.grasping_type,
            placing_type: r.placing_type,
            edible: r.edible,
        }
    }

    pub fn to_record(&self) -> AnnotationRecord {
        AnnotationRecord {
            color: self.color.clone(),
            size: self.size,
            shape: self.shape,
            container: self.container,
            state: self.state,
            destination: self.destination,
            grasping_type: self.grasping_type,
            placing_type: self.placing_type,
            edible: self.edible,
        }
    }
}

/// A single broken annotation rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyName,
    ContainerState(ObjectState),
    EdibleState(ObjectState),
    InedibleState(ObjectState),
    ContainingRequiresContainer,
    UncertainGroundTruth,
    PourRequiresContainer,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyName => write!(f, "object name is empty"),
            Violation::ContainerState(s) => write!(f, "state not allowed for container: '{s}'"),
            Violation::EdibleState(s) => {
                write!(f, "state not allowed for edible non-container: '{s}'")
            }
            Violation::InedibleState(s) => {
                write!(f, "state not allowed for inedible non-container: '{s}'")
            }
            Violation::ContainingRequiresContainer => {
                write!(f, "containing_leftover_food requires container")
            }
            Violation::UncertainGroundTruth => {
                write!(f, "destination 'uncertain' is not allowed in ground truth")
            }
            Violation::PourRequiresContainer => write!(f, "placing type 'pour' requires container"),
        }
    }
}

impl Violation {
    /// The record field the violation is about.
    pub fn field(&self) -> &'static str {
        match self {
            Violation::EmptyName => "name",
            Violation::UncertainGroundTruth => "destination",
            Violation::PourRequiresContainer => "placing_type",
            _ => "state",
        }
    }
}

/// Check every annotation rule and return all violations (empty means valid).
pub fn validate_annotation(a: &ObjectAnnotation) -> Vec<Violation> {
    let mut out = Vec::new();
    if a.name.trim().is_empty() {
        out.push(Violation::EmptyName);
    }
    let allowed = ObjectState::allowed_for(a.container, a.edible);
    if !allowed.contains(&a.state) {
        out.push(match (a.container, a.edible) {
            (true, _) => Violation::ContainerState(a.state),
            (false, true) => Violation::EdibleState(a.state),
            (false, false) => Violation::InedibleState(a.state),
        });
    }
    if a.state == ObjectState::ContainingLeftoverFood && !a.container {
        out.push(Violation::ContainingRequiresContainer);
    }
    if a.destination == Destination::Uncertain {
        out.push(Violation::UncertainGroundTruth);
    }
    if a.placing_type == PlaceType::Pour && !a.container {
        out.push(Violation::PourRequiresContainer);
    }
    out
}

/// A scene: an ordered set of uniquely named objects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scene {
    pub scene_id: String,
    pub image_ref: Option<PathBuf>,
    pub objects: Vec<ObjectAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SceneIssue {
    #[error("scene has no objects")]
    NoObjects,
    #[error("duplicate object name '{0}'")]
    DuplicateName(String),
    #[error("objects of category '{stem}' must carry an index when repeated (found '{name}')")]
    MissingIndex { stem: String, name: String },
    #[error("object '{name}': {violation}")]
    Object { name: String, violation: Violation },
}

impl Scene {
    pub fn object(&self, name: &str) -> Option<&ObjectAnnotation> {
        self.objects.iter().find(|o| o.name == name)
    }

    /// All scene-level and per-object problems.
    pub fn validate(&self) -> Vec<SceneIssue> {
        let mut issues = Vec::new();
        if self.objects.is_empty() {
            issues.push(SceneIssue::NoObjects);
        }
        let mut seen: HashMap<String, usize> = HashMap::new();
        let mut stems: HashMap<String, Vec<(String, Option<u32>)>> = HashMap::new();
        for o in &self.objects {
            for violation in validate_annotation(o) {
                issues.push(SceneIssue::Object { name: o.name.clone(), violation });
            }
            if let Ok(label) = canonicalize_label(&o.name) {
                *seen.entry(label.token.clone()).or_default() += 1;
                if seen[&label.token] == 2 {
                    issues.push(SceneIssue::DuplicateName(o.name.clone()));
                }
                stems.entry(label.stem).or_default().push((o.name.clone(), label.index));
            }
        }
        let mut repeated: Vec<_> = stems.into_iter().filter(|(_, v)| v.len() > 1).collect();
        repeated.sort();
        for (stem, members) in repeated {
            for (name, index) in members {
                if index.is_none() {
                    issues.push(SceneIssue::MissingIndex { stem: stem.clone(), name });
                }
            }
        }
        issues
    }
}

impl Serialize for Scene {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Doc<'a> {
            scene_id: &'a str,
            #[serde(skip_serializing_if = "Option::is_none")]
            image_ref: Option<&'a Path>,
            objects: IndexMap<&'a str, AnnotationRecord>,
        }
        Doc {
            scene_id: &self.scene_id,
            image_ref: self.image_ref.as_deref(),
            objects: self.objects.iter().map(|o| (o.name.as_str(), o.to_record())).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Scene {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            scene_id: String,
            #[serde(default)]
            image_ref: Option<PathBuf>,
            objects: ObjectMap,
        }
        let doc = Doc::deserialize(deserializer)?;
        Ok(Scene {
            scene_id: doc.scene_id,
            image_ref: doc.image_ref,
            objects: doc
                .objects
                .0
                .into_iter()
                .map(|(name, record)| ObjectAnnotation::from_record(name, record))
                .collect(),
        })
    }
}

/// Ordered object map that rejects duplicate keys instead of overwriting.
struct ObjectMap(Vec<(String, AnnotationRecord)>);

impl<'de> Deserialize<'de> for ObjectMap {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct MapVisitor;
        impl<'de> Visitor<'de> for MapVisitor {
            type Value = ObjectMap;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map of object name to annotation")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<ObjectMap, A::Error> {
                let mut out: Vec<(String, AnnotationRecord)> = Vec::new();
                while let Some(key) = map.next_key::<String>()? {
                    if out.iter().any(|(k, _)| *k == key) {
                        return Err(de::Error::custom(format!("duplicate object name '{key}'")));
                    }
                    let record: AnnotationRecord = map.next_value()?;
                    out.push((key, record));
                }
                Ok(ObjectMap(out))
            }
        }
        deserializer.deserialize_map(MapVisitor)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty: bool,
}

impl DatasetMetadata {
    fn is_default(&self) -> bool {
        *self == DatasetMetadata::default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub name: String,
    pub version: String,
    pub catalog_version: String,
    #[serde(default, skip_serializing_if = "DatasetMetadata::is_default")]
    pub metadata: DatasetMetadata,
    pub scenes: Vec<Scene>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
}

impl Dataset {
    pub fn scene(&self, scene_id: &str) -> Option<&Scene> {
        self.scenes.iter().find(|s| s.scene_id == scene_id)
    }

    pub fn object_count(&self) -> usize {
        self.scenes.iter().map(|s| s.objects.len()).sum()
    }

    /// Validate every scene; the first problem is reported with its object path.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut ids = HashMap::new();
        for (i, scene) in self.scenes.iter().enumerate() {
            if let Some(prev) = ids.insert(scene.scene_id.as_str(), i) {
                return Err(DatasetError::Schema {
                    path: format!("scenes[{i}].scene_id"),
                    message: format!("duplicate scene_id '{}' (also scenes[{prev}])", scene.scene_id),
                });
            }
            if let Some(issue) = scene.validate().into_iter().next() {
                let path = match &issue {
                    SceneIssue::Object { name, violation } => {
                        format!("scenes[{i}].objects[\"{name}\"].{}", violation.field())
                    }
                    SceneIssue::DuplicateName(name) | SceneIssue::MissingIndex { name, .. } => {
                        format!("scenes[{i}].objects[\"{name}\"]")
                    }
                    SceneIssue::NoObjects => format!("scenes[{i}].objects"),
                };
                return Err(DatasetError::Schema { path, message: issue.to_string() });
            }
        }
        Ok(())
    }

    /// Parse and validate a dataset document.
    pub fn from_json_str(text: &str) -> Result<Self, DatasetError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| DatasetError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let dataset: Dataset = serde_json::from_str(text).map_err(|e| schema_error(&value, e))?;
        dataset.validate()?;
        Ok(dataset)
    }

    /// Canonical serialization: pretty JSON with a trailing newline.
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("dataset serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_json_string())
            .map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
    }
}

/// Map a typed-deserialization failure on a syntactically valid document to
/// a schema error. serde_json only reports positions, so the offending field
/// path is recovered by locating the position inside the value tree.
fn schema_error(value: &serde_json::Value, e: serde_json::Error) -> DatasetError {
    let path = locate_field(value, &e.to_string()).unwrap_or_else(|| "$".to_string());
    DatasetError::Schema {
        path,
        message: format!("{e}"),
    }
}

fn locate_field(value: &serde_json::Value, message: &str) -> Option<String> {
    let scenes = value.get("scenes")?.as_array()?;
    for (i, scene) in scenes.iter().enumerate() {
        let Some(objects) = scene.get("objects").and_then(|o| o.as_object()) else {
            return Some(format!("scenes[{i}].objects"));
        };
        for (name, record) in objects {
            let Some(record) = record.as_object() else {
                return Some(format!("scenes[{i}].objects[\"{name}\"]"));
            };
            for (field, v) in record {
                let bad = match field.as_str() {
                    "size" => !is_variant::<SizeClass>(v),
                    "shape" => !is_variant::<ShapeClass>(v),
                    "state" => !is_variant::<ObjectState>(v),
                    "destination" => !is_variant::<Destination>(v),
                    "grasping_type" => !is_variant::<GraspType>(v),
                    "placing_type" => !is_variant::<PlaceType>(v),
                    "color" => !v.is_string(),
                    "container" | "edible" => !v.is_boolean(),
                    _ => true,
                };
                if bad {
                    return Some(format!("scenes[{i}].objects[\"{name}\"].{field}"));
                }
            }
            for required in [
                "color",
                "size",
                "shape",
                "container",
                "state",
                "destination",
                "grasping_type",
                "placing_type",
                "edible",
            ] {
                if !record.contains_key(required) {
                    return Some(format!("scenes[{i}].objects[\"{name}\"].{required}"));
                }
            }
            if message.contains(&format!("duplicate object name '{name}'")) {
                return Some(format!("scenes[{i}].objects[\"{name}\"]"));
            }
        }
    }
    None
}

fn is_variant<E: LabelEnum>(v: &serde_json::Value) -> bool {
    v.as_str().and_then(E::parse_exact).is_some()
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    Dataset::from_json_str(&text)
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), DatasetError> {
    dataset.save(path)
}
