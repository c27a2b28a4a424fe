//! Deterministic task semantics: leftover classification, default
//! destinations, grasp selection and the expected plan per task.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::plan::{Field, ObjectManipulationPlan};
use crate::scene::{
    Destination, GraspType, ObjectAnnotation, ObjectState, PlaceType, Scene, ShapeClass, SizeClass,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskId {
    T1,
    T2,
    T3,
}

impl TaskId {
    pub const ALL: [TaskId; 3] = [TaskId::T1, TaskId::T2, TaskId::T3];

    pub fn instruction(self) -> &'static str {
        match self {
            TaskId::T1 => "clear the table",
            TaskId::T2 => "clear the table and keep all the leftover food",
            TaskId::T3 => "clear the table and discard all the leftover food",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::T1 => "T1",
            TaskId::T2 => "T2",
            TaskId::T3 => "T3",
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = OracleError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "T1" => Ok(TaskId::T1),
            "T2" => Ok(TaskId::T2),
            "T3" => Ok(TaskId::T3),
            _ => Err(OracleError::UnknownTask(s.to_string())),
        }
    }
}

/// A task and its instruction text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: TaskId,
    pub instruction: String,
}

impl TaskSpec {
    pub fn new(id: TaskId) -> Self {
        TaskSpec { id, instruction: id.instruction().to_string() }
    }

    /// Accepts an instruction that matches the task's canonical phrasing up
    /// to whitespace.
    pub fn with_instruction(id: TaskId, instruction: &str) -> Result<Self, OracleError> {
        let normalized = instruction.split_whitespace().collect::<Vec<_>>().join(" ");
        if normalized != id.instruction() {
            return Err(OracleError::InstructionMismatch { task: id, instruction: instruction.into() });
        }
        Ok(TaskSpec { id, instruction: normalized })
    }
}

impl From<TaskId> for TaskSpec {
    fn from(id: TaskId) -> Self {
        TaskSpec::new(id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeftoverClass {
    None,
    LeftoverFood,
    ContainingLeftoverFood,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("state '{state}' is incompatible with container={container}")]
    IncompatiblePair { state: ObjectState, container: bool },
    #[error("'{0}' is a leftover and has no context-free default destination")]
    LeftoverNotDefaultable(String),
    #[error("instruction '{instruction}' does not match task {task}")]
    InstructionMismatch { task: TaskId, instruction: String },
    #[error("unknown task '{0}'")]
    UnknownTask(String),
}

/// What the oracle expects for one object under one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedPlan {
    pub name: String,
    pub state: ObjectState,
    pub destination: Destination,
    pub grasping_type: GraspType,
    pub placing_type: PlaceType,
    pub ambiguous: bool,
}

impl ExpectedPlan {
    /// The plan record the oracle backend emits, echoing the annotation's
    /// visible attributes.
    pub fn to_omp(&self, a: &ObjectAnnotation) -> ObjectManipulationPlan {
        ObjectManipulationPlan {
            name: self.name.clone(),
            color: Field::Known(a.color.clone()),
            size: Field::Known(a.size),
            shape: Field::Known(a.shape),
            container: Field::Known(a.container),
            state: Field::Known(self.state),
            destination: Field::Known(self.destination),
            grasping_type: Field::Known(self.grasping_type),
            placing_type: Field::Known(self.placing_type),
            raw_source: String::new(),
        }
    }
}

pub fn classify_leftover(state: ObjectState, container: bool) -> Result<LeftoverClass, OracleError> {
    use ObjectState::*;
    let compatible = match state {
        Clean | Dirty => true,
        ContainingLeftoverFood => container,
        Intact | Peel | LeftoverFood => !container,
    };
    if !compatible {
        return Err(OracleError::IncompatiblePair { state, container });
    }
    Ok(match state {
        ContainingLeftoverFood => LeftoverClass::ContainingLeftoverFood,
        LeftoverFood => LeftoverClass::LeftoverFood,
        _ => LeftoverClass::None,
    })
}

/// Size/shape grasp rule: containers and medium-or-larger flat/oval objects
/// are taken by the edge, everything else from the top.
pub fn grasp_rule(container: bool, shape: ShapeClass, size: SizeClass) -> GraspType {
    let flat = matches!(shape, ShapeClass::Rectangle | ShapeClass::Oval);
    let large = matches!(size, SizeClass::Medium | SizeClass::Big);
    if container || (flat && large) {
        GraspType::EdgeGrasp
    } else {
        GraspType::TopGrasp
    }
}

/// Destination/placing for a leftover under "keep" semantics.
pub fn keep_rule() -> (Destination, PlaceType) {
    (Destination::Fridge, PlaceType::Place)
}

/// Destination/placing for a leftover under "discard" semantics.
pub fn discard_rule(class: LeftoverClass) -> (Destination, PlaceType) {
    match class {
        LeftoverClass::ContainingLeftoverFood => (Destination::Dishwasher, PlaceType::Pour),
        _ => (Destination::TrashBin, PlaceType::Place),
    }
}

/// Rule engine over a catalog.
#[derive(Debug, Clone)]
pub struct Oracle {
    catalog: Arc<Catalog>,
}

impl Default for Oracle {
    fn default() -> Self {
        static SHARED: OnceLock<Arc<Catalog>> = OnceLock::new();
        Oracle { catalog: SHARED.get_or_init(|| Arc::new(Catalog::builtin().clone())).clone() }
    }
}

impl Oracle {
    pub fn new(catalog: Arc<Catalog>) -> Self {
        Oracle { catalog }
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn shared_catalog(&self) -> Arc<Catalog> {
        self.catalog.clone()
    }

    pub fn default_destination(&self, a: &ObjectAnnotation) -> Result<Destination, OracleError> {
        if classify_leftover(a.state, a.container)? != LeftoverClass::None {
            return Err(OracleError::LeftoverNotDefaultable(a.name.clone()));
        }
        let entry = self.catalog.resolve(&a.name).map(|m| m.entry);
        if let Some(d) = entry.and_then(|e| e.states.get(&a.state)).and_then(|s| s.destination) {
            return Ok(d);
        }
        Ok(match a.state {
            ObjectState::Peel => Destination::TrashBin,
            ObjectState::Dirty => Destination::Dishwasher,
            // unknown intact food falls back to the cupboard
            _ => Destination::Cupboard,
        })
    }

    pub fn grasp(&self, a: &ObjectAnnotation) -> GraspType {
        self.catalog
            .resolve(&a.name)
            .and_then(|m| m.entry.grasp)
            .unwrap_or_else(|| grasp_rule(a.container, a.shape, a.size))
    }

    pub fn ground_truth_plan(
        &self,
        a: &ObjectAnnotation,
        task: &TaskSpec,
    ) -> Result<ExpectedPlan, OracleError> {
        let class = classify_leftover(a.state, a.container)?;
        let (destination, placing_type) = match (class, task.id) {
            (LeftoverClass::None, _) => (self.default_destination(a)?, PlaceType::Place),
            (_, TaskId::T1) => (Destination::Uncertain, PlaceType::Place),
            (_, TaskId::T2) => keep_rule(),
            (class, TaskId::T3) => discard_rule(class),
        };
        Ok(ExpectedPlan {
            name: a.name.clone(),
            state: a.state,
            destination,
            grasping_type: self.grasp(a),
            placing_type,
            ambiguous: destination == Destination::Uncertain,
        })
    }

    pub fn expected_plans(&self, scene: &Scene, task: &TaskSpec) -> Result<Vec<ExpectedPlan>, OracleError> {
        scene.objects.iter().map(|a| self.ground_truth_plan(a, task)).collect()
    }

    /// Oracle plans rendered as plan records, one per object.
    pub fn plan_scene(&self, scene: &Scene, task: &TaskSpec) -> Result<Vec<ObjectManipulationPlan>, OracleError> {
        scene
            .objects
            .iter()
            .map(|a| Ok(self.ground_truth_plan(a, task)?.to_omp(a)))
            .collect()
    }
}
