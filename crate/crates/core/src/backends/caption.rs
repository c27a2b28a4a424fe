//! Simulated dense captioning with a state-blindness error model, and a
//! rule-based text planner that reads such captions back.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::oracle::{Oracle, TaskSpec};
use crate::plan::emit_plans;
use crate::rng::{fnv1a, SplitMix64};
use crate::scene::{
    Destination, GraspType, LabelEnum, ObjectAnnotation, PlaceType, Scene, ShapeClass, SizeClass,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptionErrorModel {
    /// Probability that an object's state qualifier is dropped.
    pub p_state_omit: f64,
    /// Probability that an object is not described at all.
    pub p_object_miss: f64,
    pub seed: u64,
}

impl CaptionErrorModel {
    pub fn new(p_state_omit: f64, p_object_miss: f64, seed: u64) -> Result<Self, String> {
        for (name, p) in [("p_state_omit", p_state_omit), ("p_object_miss", p_object_miss)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        Ok(CaptionErrorModel { p_state_omit, p_object_miss, seed })
    }

    pub fn noiseless(seed: u64) -> Self {
        CaptionErrorModel { p_state_omit: 0.0, p_object_miss: 0.0, seed }
    }
}

/// One caption sentence per retained object, in scene order.
///
/// Each object consumes exactly two uniforms (state, miss) whatever the
/// probabilities are, so for a fixed seed the set of degraded objects only
/// grows as either probability increases.
pub fn simulate_captions(oracle: &Oracle, scene: &Scene, em: &CaptionErrorModel) -> String {
    let mut rng = SplitMix64::derive(em.seed, fnv1a(scene.scene_id.as_bytes()));
    let mut lines = Vec::new();
    for a in &scene.objects {
        let u_state = rng.next_f64();
        let u_miss = rng.next_f64();
        if u_miss < em.p_object_miss {
            continue;
        }
        let category = oracle.catalog().category_of(&a.name).unwrap_or_else(|| a.name.clone());
        let noun = if u_state < em.p_state_omit {
            category
        } else {
            oracle
                .catalog()
                .entry(&category)
                .and_then(|e| e.surface(a.state))
                .map(str::to_string)
                .unwrap_or(category)
        };
        lines.push(format!("a {} {} {} {noun} on the table.", a.size, a.shape, a.color));
    }
    lines.join("\n")
}

/// Reads captions of the form produced by [`simulate_captions`] and plans
/// each described object with the oracle rules. Anything it cannot read is
/// skipped. An object described without a state qualifier gets its
/// category's default state.
#[derive(Debug, Clone, Default)]
pub struct RuleBasedPlanner {
    oracle: Oracle,
}

impl RuleBasedPlanner {
    pub fn new(oracle: Oracle) -> Self {
        RuleBasedPlanner { oracle }
    }

    /// Plan document text in the canonical emit format.
    pub fn plan(&self, captions: &str, task: &TaskSpec) -> String {
        let mut objects: Vec<ObjectAnnotation> = captions.split(['\n', '.']).filter_map(|s| self.read(s)).collect();
        let mut totals: HashMap<String, usize> = HashMap::new();
        for a in &objects {
            *totals.entry(a.name.clone()).or_default() += 1;
        }
        let mut seen: HashMap<String, usize> = HashMap::new();
        for a in &mut objects {
            if totals[&a.name] > 1 {
                let n = seen.entry(a.name.clone()).or_default();
                *n += 1;
                a.name = format!("{} {n}", a.name);
            }
        }
        let plans: Vec<_> = objects
            .iter()
            .filter_map(|a| self.oracle.ground_truth_plan(a, task).ok().map(|p| p.to_omp(a)))
            .collect();
        emit_plans(&plans)
    }

    fn read(&self, sentence: &str) -> Option<ObjectAnnotation> {
        let lowered = sentence.trim().to_lowercase();
        let mut words: Vec<&str> = lowered.split_whitespace().collect();
        if words.ends_with(&["on", "the", "table"]) {
            words.truncate(words.len() - 3);
        }
        if matches!(words.first(), Some(&("a" | "an" | "the"))) {
            words.remove(0);
        }
        let mut size = None;
        let mut shape = None;
        while let Some(w) = words.first() {
            if let (None, Some(s)) = (size, SizeClass::parse_exact(w)) {
                size = Some(s);
            } else if let (None, Some(s)) = (shape, ShapeClass::parse_exact(w)) {
                shape = Some(s);
            } else {
                break;
            }
            words.remove(0);
        }
        // longest suffix that names a catalog surface
        let catalog = self.oracle.catalog();
        let (split, found) = (0..words.len()).find_map(|i| catalog.resolve(&words[i..].join(" ")).map(|m| (i, m)))?;
        let entry = found.entry;
        let state = found.state.unwrap_or_else(|| entry.default_state());
        let color = if split == 0 { entry.colors.first().cloned().unwrap_or_default() } else { words[..split].join(" ") };
        Some(ObjectAnnotation {
            name: entry.name.clone(),
            color,
            size: size.or_else(|| entry.sizes.first().copied())?,
            shape: shape.or_else(|| entry.shapes.first().copied())?,
            container: entry.container,
            state,
            destination: Destination::Cupboard,
            grasping_type: GraspType::TopGrasp,
            placing_type: PlaceType::Place,
            edible: entry.edible,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{generate_dataset, GenConfig};
    use crate::oracle::TaskId;
    use crate::plan::parse_model_output;
    use crate::scene::ObjectState;

    fn object(name: &str, state: ObjectState, container: bool, edible: bool) -> ObjectAnnotation {
        ObjectAnnotation {
            name: name.into(),
            color: "red".into(),
            size: SizeClass::Small,
            shape: ShapeClass::Round,
            container,
            state,
            destination: Destination::Fridge,
            grasping_type: GraspType::TopGrasp,
            placing_type: PlaceType::Place,
            edible,
        }
    }

    fn scene(objects: Vec<ObjectAnnotation>) -> Scene {
        Scene { scene_id: "s".into(), image_ref: None, objects }
    }

    #[test]
    fn noiseless_caption_keeps_state_words() {
        let s = scene(vec![object("apple", ObjectState::LeftoverFood, false, true)]);
        let c = simulate_captions(&Oracle::default(), &s, &CaptionErrorModel::noiseless(1));
        assert_eq!(c, "a small round red half apple on the table.");
    }

    #[test]
    fn saturated_omission_removes_every_qualifier() {
        let o = Oracle::default();
        let d = generate_dataset(&o, &GenConfig::default()).unwrap();
        let em = CaptionErrorModel::new(1.0, 0.0, 9).unwrap();
        let qualifiers = o.catalog().qualifier_words();
        for s in &d.scenes {
            let c = simulate_captions(&o, s, &em);
            assert_eq!(c.lines().count(), s.objects.len());
            for w in c.split_whitespace() {
                let w = w.trim_end_matches('.');
                assert!(!qualifiers.iter().any(|q| q == w), "'{w}' in {c}");
            }
        }
    }

    #[test]
    fn noiseless_round_trip_reproduces_the_oracle() {
        let o = Oracle::default();
        let d = generate_dataset(&o, &GenConfig::default()).unwrap();
        let planner = RuleBasedPlanner::new(o.clone());
        for task in TaskId::ALL {
            let spec = TaskSpec::from(task);
            for s in &d.scenes {
                let captions = simulate_captions(&o, s, &CaptionErrorModel::noiseless(3));
                let report = parse_model_output(&planner.plan(&captions, &spec)).unwrap();
                assert_eq!(report.plans, o.plan_scene(s, &spec).unwrap(), "{}", s.scene_id);
            }
        }
    }

    #[test]
    fn stateless_caption_gets_the_default_state() {
        let planner = RuleBasedPlanner::default();
        let text = planner.plan("a medium round white bowl on the table.", &TaskId::T1.into());
        let report = parse_model_output(&text).unwrap();
        assert!(report.plans[0].state.is(&ObjectState::Clean));
        assert!(report.plans[0].destination.is(&Destination::Cupboard));
    }

    #[test]
    fn unreadable_sentences_are_skipped() {
        let planner = RuleBasedPlanner::default();
        let text = planner.plan("a teapot on the table. a small round red apple on the table.", &TaskId::T2.into());
        let report = parse_model_output(&text).unwrap();
        assert_eq!(report.plans.len(), 1);
        assert_eq!(report.plans[0].name, "apple");
    }

    #[test]
    fn probabilities_are_range_checked() {
        assert!(CaptionErrorModel::new(1.5, 0.0, 0).is_err());
        assert!(CaptionErrorModel::new(0.0, -0.1, 0).is_err());
    }
}
