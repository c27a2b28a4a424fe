//! Seeded synthetic scene generator.

use std::collections::HashMap;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, CatalogEntry};
use crate::oracle::{Oracle, TaskId};
use crate::rng::SplitMix64;
use crate::scene::{
    Dataset, DatasetMetadata, Destination, GraspType, ObjectAnnotation, ObjectState, PlaceType, Scene,
};

pub const DATASET_NAME: &str = "synthetic-tabletop";

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub scene_count: usize,
    pub objects_per_scene: CountRange,
    /// Empty means uniform over the catalog.
    pub category_weights: IndexMap<String, f64>,
    /// Per category; a missing category draws its states uniformly.
    pub state_weights: IndexMap<String, IndexMap<ObjectState, f64>>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 42,
            scene_count: 40,
            objects_per_scene: CountRange { min: 3, max: 6 },
            category_weights: IndexMap::new(),
            state_weights: IndexMap::new(),
        }
    }
}

impl GenConfig {
    pub fn from_json(text: &str) -> Result<Self, GenError> {
        serde_json::from_str(text).map_err(|e| GenError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, GenError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GenError::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Config checked against a catalog and flattened into weight vectors.
struct Plan<'a> {
    entries: Vec<&'a CatalogEntry>,
    category_weights: Vec<f64>,
    state_weights: Vec<Vec<(ObjectState, f64)>>,
}

fn check_weight(what: &str, w: f64) -> Result<(), GenError> {
    if w.is_finite() && w >= 0.0 {
        Ok(())
    } else {
        Err(GenError::InvalidConfig(format!("{what}: weight {w} is not a non-negative number")))
    }
}

fn plan<'a>(catalog: &'a Catalog, config: &GenConfig) -> Result<Plan<'a>, GenError> {
    let range = config.objects_per_scene;
    if range.min < 1 || range.max < range.min {
        return Err(GenError::InvalidConfig(format!(
            "objects_per_scene must satisfy 1 <= min <= max, got {}..={}",
            range.min, range.max
        )));
    }
    for name in config.category_weights.keys().chain(config.state_weights.keys()) {
        if catalog.entry(name).is_none() {
            return Err(GenError::InvalidConfig(format!("unknown category '{name}'")));
        }
    }
    let mut entries = Vec::new();
    let mut category_weights = Vec::new();
    let mut state_weights = Vec::new();
    for entry in &catalog.categories {
        let w = if config.category_weights.is_empty() {
            1.0
        } else {
            config.category_weights.get(&entry.name).copied().unwrap_or(0.0)
        };
        check_weight(&entry.name, w)?;
        let states: Vec<(ObjectState, f64)> = match config.state_weights.get(&entry.name) {
            None => entry.allowed_states().map(|s| (s, 1.0)).collect(),
            Some(table) => {
                for (state, sw) in table {
                    if !entry.states.contains_key(state) {
                        return Err(GenError::InvalidConfig(format!(
                            "category '{}' does not allow state '{state}'",
                            entry.name
                        )));
                    }
                    check_weight(&format!("{}/{state}", entry.name), *sw)?;
                }
                entry.allowed_states().map(|s| (s, table.get(&s).copied().unwrap_or(0.0))).collect()
            }
        };
        if w > 0.0 && states.iter().all(|(_, sw)| *sw == 0.0) {
            return Err(GenError::InvalidConfig(format!("category '{}' has zero state weights", entry.name)));
        }
        entries.push(entry);
        category_weights.push(w);
        state_weights.push(states);
    }
    if category_weights.iter().sum::<f64>() <= 0.0 {
        return Err(GenError::InvalidConfig("category weights sum to zero".into()));
    }
    Ok(Plan { entries, category_weights, state_weights })
}

fn pick<'v>(rng: &mut SplitMix64, options: &'v [String]) -> &'v str {
    &options[rng.below(options.len() as u64) as usize]
}

fn pick_copy<T: Copy>(rng: &mut SplitMix64, options: &[T]) -> T {
    options[rng.below(options.len() as u64) as usize]
}

fn scene_id(index: usize) -> String {
    format!("scene-{index:03}")
}

fn draw_scene(oracle: &Oracle, plan: &Plan<'_>, config: &GenConfig, index: usize) -> Scene {
    let mut rng = SplitMix64::derive(config.seed, index as u64);
    let range = config.objects_per_scene;
    let count = range.min + rng.below((range.max - range.min + 1) as u64) as usize;
    let mut drawn = Vec::with_capacity(count);
    for _ in 0..count {
        let c = rng.weighted(&plan.category_weights);
        let entry = plan.entries[c];
        let weights: Vec<f64> = plan.state_weights[c].iter().map(|(_, w)| *w).collect();
        let state = plan.state_weights[c][rng.weighted(&weights)].0;
        let color = pick(&mut rng, &entry.colors).to_string();
        let size = pick_copy(&mut rng, &entry.sizes);
        let shape = pick_copy(&mut rng, &entry.shapes);
        drawn.push(ObjectAnnotation {
            name: entry.name.clone(),
            color,
            size,
            shape,
            container: entry.container,
            state,
            destination: Destination::Cupboard,
            grasping_type: GraspType::TopGrasp,
            placing_type: PlaceType::Place,
            edible: entry.edible,
        });
    }

    let mut totals: HashMap<String, usize> = HashMap::new();
    for a in &drawn {
        *totals.entry(a.name.clone()).or_default() += 1;
    }
    let mut seen: HashMap<String, usize> = HashMap::new();
    let task = TaskId::T3.into();
    for a in &mut drawn {
        if totals[&a.name] > 1 {
            let n = seen.entry(a.name.clone()).or_default();
            *n += 1;
            a.name = format!("{} {}", a.name, n);
        }
        // stored annotation carries the plan for the unambiguous (discard) reading
        let p = oracle.ground_truth_plan(a, &task).expect("catalog states are compatible");
        a.destination = p.destination;
        a.grasping_type = p.grasping_type;
        a.placing_type = p.placing_type;
    }
    Scene { scene_id: scene_id(index), image_ref: None, objects: drawn }
}

/// One scene, a pure function of `(config.seed, index)`.
pub fn generate_scene(oracle: &Oracle, config: &GenConfig, index: usize) -> Result<Scene, GenError> {
    let plan = plan(oracle.catalog(), config)?;
    Ok(draw_scene(oracle, &plan, config, index))
}

pub fn generate_dataset(oracle: &Oracle, config: &GenConfig) -> Result<Dataset, GenError> {
    let plan = plan(oracle.catalog(), config)?;
    let scenes: Vec<Scene> = (0..config.scene_count).map(|i| draw_scene(oracle, &plan, config, i)).collect();
    let catalog_version = oracle.catalog().version.clone();
    Ok(Dataset {
        name: DATASET_NAME.into(),
        version: format!("{catalog_version}+seed{}", config.seed),
        catalog_version,
        metadata: DatasetMetadata { seed: Some(config.seed), empty: scenes.is_empty() },
        scenes,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;
    use crate::scene::validate_annotation;

    #[test]
    fn same_seed_and_index_give_the_same_scene() {
        let o = Oracle::default();
        let c = GenConfig::default();
        assert_eq!(generate_scene(&o, &c, 0).unwrap(), generate_scene(&o, &c, 0).unwrap());
        assert_ne!(generate_scene(&o, &c, 0).unwrap(), generate_scene(&o, &c, 1).unwrap());
    }

    #[test]
    fn forced_bowl_with_soup() {
        let o = Oracle::default();
        let mut c = GenConfig::default();
        c.category_weights.insert("bowl".into(), 1.0);
        c.state_weights.insert("bowl".into(), IndexMap::from([(ObjectState::ContainingLeftoverFood, 1.0)]));
        let d = generate_dataset(&o, &c).unwrap();
        assert!(d.object_count() > 0);
        for a in d.scenes.iter().flat_map(|s| &s.objects) {
            assert!(a.name.starts_with("bowl"));
            assert!(a.container);
            assert_eq!(a.state, ObjectState::ContainingLeftoverFood);
        }
    }

    #[test]
    fn generated_annotations_are_valid_and_cover_the_catalog() {
        let o = Oracle::default();
        let d = generate_dataset(&o, &GenConfig::default()).unwrap();
        d.validate().unwrap();
        for a in d.scenes.iter().flat_map(|s| &s.objects) {
            assert!(validate_annotation(a).is_empty(), "{a:?}");
        }
        let seen: HashSet<(String, ObjectState)> = d
            .scenes
            .iter()
            .flat_map(|s| &s.objects)
            .map(|a| (o.catalog().category_of(&a.name).unwrap(), a.state))
            .collect();
        for entry in &o.catalog().categories {
            for state in entry.allowed_states() {
                assert!(seen.contains(&(entry.name.clone(), state)), "{} / {state} never generated", entry.name);
            }
        }
        let n = d.object_count();
        assert!((40 * 3..=40 * 6).contains(&n));
    }

    #[test]
    fn empty_dataset_is_flagged() {
        let c = GenConfig { scene_count: 0, ..GenConfig::default() };
        let d = generate_dataset(&Oracle::default(), &c).unwrap();
        assert!(d.metadata.empty);
        d.validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        let o = Oracle::default();
        let zero = GenConfig { category_weights: IndexMap::from([("apple".into(), 0.0)]), ..GenConfig::default() };
        assert!(generate_dataset(&o, &zero).is_err());
        let range = GenConfig { objects_per_scene: CountRange { min: 0, max: 2 }, ..GenConfig::default() };
        assert!(generate_dataset(&o, &range).is_err());
        let unknown = GenConfig { category_weights: IndexMap::from([("teapot".into(), 1.0)]), ..GenConfig::default() };
        assert!(generate_dataset(&o, &unknown).is_err());
        let state = GenConfig {
            state_weights: IndexMap::from([("fork".into(), IndexMap::from([(ObjectState::Peel, 1.0)]))]),
            ..GenConfig::default()
        };
        assert!(generate_dataset(&o, &state).is_err());
        assert!(GenConfig::from_json("{\"seed\": 1, \"colour\": 2}").is_err());
        assert_eq!(GenConfig::from_json("{\"seed\": 7}").unwrap().scene_count, 40);
    }
}
