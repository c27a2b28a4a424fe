//! Object catalog: categories, their allowed states, caption surface forms
//! and per-state destination overrides.

use std::collections::HashMap;
use std::sync::OnceLock;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::canonicalize_label;
use crate::scene::{Destination, GraspType, ObjectState, ShapeClass, SizeClass};

const BUILTIN_CATALOG: &str = include_str!("../fixtures/catalog.json");

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("catalog has no categories")]
    Empty,
    #[error("category '{category}': {message}")]
    Entry { category: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateEntry {
    /// Phrase a captioner uses for an object of this category in this state.
    pub surface: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
    /// Overrides the generic state→destination rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub destination: Option<Destination>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogEntry {
    pub name: String,
    pub container: bool,
    pub edible: bool,
    pub colors: Vec<String>,
    pub sizes: Vec<SizeClass>,
    pub shapes: Vec<ShapeClass>,
    pub states: IndexMap<ObjectState, StateEntry>,
    /// Overrides the shape/size grasp rule for the whole category.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grasp: Option<GraspType>,
}

impl CatalogEntry {
    pub fn allowed_states(&self) -> impl Iterator<Item = ObjectState> + '_ {
        self.states.keys().copied()
    }

    /// The state assumed when nothing in the description qualifies the object.
    pub fn default_state(&self) -> ObjectState {
        *self.states.keys().next().expect("validated catalog entries have states")
    }

    pub fn surface(&self, state: ObjectState) -> Option<&str> {
        self.states.get(&state).map(|s| s.surface.as_str())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogDoc {
    version: String,
    categories: Vec<CatalogEntry>,
}

#[derive(Debug, Clone)]
pub struct Catalog {
    pub version: String,
    pub categories: Vec<CatalogEntry>,
    surfaces: HashMap<String, (usize, Option<ObjectState>)>,
}

impl PartialEq for Catalog {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version && self.categories == other.categories
    }
}

/// A phrase resolved against the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SurfaceMatch<'a> {
    pub entry: &'a CatalogEntry,
    /// `None` when the phrase is the bare category name.
    pub state: Option<ObjectState>,
}

impl Catalog {
    pub fn builtin() -> &'static Catalog {
        static CATALOG: OnceLock<Catalog> = OnceLock::new();
        CATALOG.get_or_init(|| Catalog::from_json(BUILTIN_CATALOG).expect("builtin catalog is valid"))
    }

    pub fn from_json(text: &str) -> Result<Self, CatalogError> {
        let doc: CatalogDoc = serde_json::from_str(text)?;
        Self::new(doc.version, doc.categories)
    }

    pub fn to_json(&self) -> String {
        let doc = CatalogDoc { version: self.version.clone(), categories: self.categories.clone() };
        serde_json::to_string_pretty(&doc).expect("catalog serializes")
    }

    pub fn new(version: String, categories: Vec<CatalogEntry>) -> Result<Self, CatalogError> {
        if categories.is_empty() {
            return Err(CatalogError::Empty);
        }
        let mut surfaces = HashMap::new();
        for (i, entry) in categories.iter().enumerate() {
            let fail = |message: String| CatalogError::Entry { category: entry.name.clone(), message };
            if entry.states.is_empty() {
                return Err(fail("no states".into()));
            }
            if entry.colors.is_empty() || entry.sizes.is_empty() || entry.shapes.is_empty() {
                return Err(fail("colors, sizes and shapes need at least one option".into()));
            }
            let allowed = ObjectState::allowed_for(entry.container, entry.edible);
            for (state, s) in &entry.states {
                if !allowed.contains(state) {
                    return Err(fail(format!("state '{state}' violates the annotation rules")));
                }
                if s.destination == Some(Destination::Uncertain) {
                    return Err(fail("a default destination cannot be 'uncertain'".into()));
                }
                if *state == ObjectState::Intact && s.destination.is_none() {
                    return Err(fail("intact state needs a destination".into()));
                }
            }
            let name = canonical(&entry.name).ok_or_else(|| fail("empty name".into()))?;
            if name != entry.name {
                return Err(fail(format!("name is not canonical (expected '{name}')")));
            }
            let mut insert = |phrase: &str, state: Option<ObjectState>| {
                let key = canonical(phrase).ok_or_else(|| fail("empty surface".into()))?;
                match surfaces.insert(key.clone(), (i, state)) {
                    Some(_) => Err(fail(format!("surface '{key}' is ambiguous"))),
                    _ => Ok(()),
                }
            };
            insert(&entry.name, None)?;
            for (state, s) in &entry.states {
                // a surface equal to the category name keeps resolving as stateless
                if canonical(&s.surface).as_deref() != Some(entry.name.as_str()) {
                    insert(&s.surface, Some(*state))?;
                }
                for alias in &s.aliases {
                    insert(alias, Some(*state))?;
                }
            }
        }
        Ok(Catalog { version, categories, surfaces })
    }

    pub fn entry(&self, category: &str) -> Option<&CatalogEntry> {
        self.categories.iter().find(|c| c.name == category)
    }

    /// Resolve a (possibly state-qualified) phrase like "half apple".
    pub fn resolve(&self, phrase: &str) -> Option<SurfaceMatch<'_>> {
        let label = canonicalize_label(phrase).ok()?;
        let &(i, state) = self.surfaces.get(&label.stem)?;
        Some(SurfaceMatch { entry: &self.categories[i], state })
    }

    /// Category for an object name; falls back to the canonical stem.
    pub fn category_of(&self, name: &str) -> Option<String> {
        let label = canonicalize_label(name).ok()?;
        match self.surfaces.get(&label.stem) {
            Some(&(i, _)) => Some(self.categories[i].name.clone()),
            None => Some(label.stem),
        }
    }

    /// Categories with exactly two allowed states.
    pub fn paired_state_categories(&self) -> Vec<&str> {
        self.categories
            .iter()
            .filter(|c| c.states.len() == 2)
            .map(|c| c.name.as_str())
            .collect()
    }

    /// Every word that appears in a state surface but not in its category name.
    pub fn qualifier_words(&self) -> Vec<String> {
        let mut words: Vec<String> = Vec::new();
        for entry in &self.categories {
            let name_words: Vec<&str> = entry.name.split(' ').collect();
            for s in entry.states.values() {
                for phrase in std::iter::once(&s.surface).chain(&s.aliases) {
                    for w in phrase.split_whitespace() {
                        let stem_like = name_words.iter().any(|n| n.starts_with(w) || w.starts_with(n));
                        if !stem_like && !words.iter().any(|x| x == w) {
                            words.push(w.to_string());
                        }
                    }
                }
            }
        }
        words.sort();
        words
    }

    /// Every (category, state) pair in catalog order.
    pub fn all_states(&self) -> Vec<(&str, ObjectState)> {
        self.categories
            .iter()
            .flat_map(|c| c.allowed_states().map(move |s| (c.name.as_str(), s)))
            .collect()
    }
}

fn canonical(phrase: &str) -> Option<String> {
    canonicalize_label(phrase).ok().map(|l| l.token)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_catalog_loads() {
        let c = Catalog::builtin();
        assert_eq!(c.categories.len(), 11);
        assert_eq!(
            c.paired_state_categories(),
            vec!["apple", "bread", "napkin", "fork", "knife", "spoon"]
        );
    }

    #[test]
    fn surfaces_resolve_to_category_and_state() {
        let c = Catalog::builtin();
        let m = c.resolve("Half Apple").unwrap();
        assert_eq!(m.entry.name, "apple");
        assert_eq!(m.state, Some(ObjectState::LeftoverFood));
        let m = c.resolve("bow with soup").unwrap();
        assert_eq!(m.entry.name, "bowl");
        assert_eq!(m.state, Some(ObjectState::ContainingLeftoverFood));
        let m = c.resolve("bananas").unwrap();
        assert_eq!(m.state, None);
        assert_eq!(c.category_of("plate 2").as_deref(), Some("plate"));
        assert_eq!(c.category_of("banana peel").as_deref(), Some("bananas"));
        assert_eq!(c.category_of("teapot").as_deref(), Some("teapot"));
        assert!(c.resolve("teapot").is_none());
    }

    #[test]
    fn qualifiers_do_not_include_category_words() {
        let words = Catalog::builtin().qualifier_words();
        for w in ["half", "sliced", "peel", "clean", "dirty", "with", "soup"] {
            assert!(words.iter().any(|x| x == w), "{w} missing");
        }
        for w in ["apple", "bowl", "bananas", "banana", "orange"] {
            assert!(!words.iter().any(|x| x == w), "{w} is a category word");
        }
    }

    #[test]
    fn rejects_state_that_breaks_annotation_rules() {
        let mut doc: serde_json::Value = serde_json::from_str(BUILTIN_CATALOG).unwrap();
        doc["categories"][0]["states"]["dirty"] = serde_json::json!({"surface": "dirty apple"});
        let err = Catalog::from_json(&doc.to_string()).unwrap_err();
        assert!(err.to_string().contains("violates"), "{err}");
    }

    #[test]
    fn round_trips_through_json() {
        let c = Catalog::builtin();
        assert_eq!(&Catalog::from_json(&c.to_json()).unwrap(), c);
    }
}
