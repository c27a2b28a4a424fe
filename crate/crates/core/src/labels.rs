//! Label canonicalization backed by a versioned synonym table.
//!
//! The table is shipped as data (`fixtures/synonyms.json`) so that two runs
//! scored with the same table version are comparable.

use std::collections::HashMap;
use std::sync::OnceLock;

use serde::Deserialize;
use thiserror::Error;

const BUILTIN_SYNONYMS: &str = include_str!("../fixtures/synonyms.json");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("label is empty")]
    EmptyLabel,
}

/// A canonical label split into its category stem and optional trailing index.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CanonicalLabel {
    pub token: String,
    pub stem: String,
    pub index: Option<u32>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SynonymTable {
    pub version: String,
    #[serde(default)]
    pub labels: HashMap<String, String>,
    #[serde(default)]
    pub fields: HashMap<String, HashMap<String, String>>,
    #[serde(default)]
    pub answers: HashMap<String, Vec<String>>,
}

impl SynonymTable {
    pub fn builtin() -> &'static SynonymTable {
        static TABLE: OnceLock<SynonymTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            serde_json::from_str(BUILTIN_SYNONYMS).expect("builtin synonym table is valid JSON")
        })
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn canonicalize(&self, raw: &str) -> Result<CanonicalLabel, LabelError> {
        let cleaned = clean(raw);
        if cleaned.is_empty() {
            return Err(LabelError::EmptyLabel);
        }
        let (stem, index) = split_index(&cleaned);
        let stem = match self.labels.get(stem) {
            Some(mapped) => mapped.clone(),
            None => stem.to_string(),
        };
        let token = match index {
            Some(i) => format!("{stem} {i}"),
            None => stem.clone(),
        };
        Ok(CanonicalLabel { token, stem, index })
    }

    /// Field-specific synonym lookup on an already canonical token.
    pub fn field_synonym(&self, field: &str, token: &str) -> Option<&str> {
        self.fields.get(field)?.get(token).map(String::as_str)
    }
}

/// Lowercase, treat `_`/`-` as spaces, trim surrounding punctuation and
/// collapse whitespace.
fn clean(raw: &str) -> String {
    let lowered: String = raw
        .to_lowercase()
        .chars()
        .map(|c| if c == '_' || c == '-' { ' ' } else { c })
        .collect();
    let trimmed = lowered.trim_matches(|c: char| !c.is_alphanumeric());
    trimmed.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn split_index(cleaned: &str) -> (&str, Option<u32>) {
    if let Some((head, last)) = cleaned.rsplit_once(' ') {
        if !last.is_empty() && last.bytes().all(|b| b.is_ascii_digit()) {
            if let Ok(index) = last.parse::<u32>() {
                return (head, Some(index));
            }
        }
    }
    (cleaned, None)
}

/// Canonicalize with the builtin synonym table.
pub fn canonicalize_label(raw: &str) -> Result<CanonicalLabel, LabelError> {
    SynonymTable::builtin().canonicalize(raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn indexed_duplicate() {
        let l = canonicalize_label("Plate 2").unwrap();
        assert_eq!(l.token, "plate 2");
        assert_eq!(l.stem, "plate");
        assert_eq!(l.index, Some(2));
    }

    #[test]
    fn identity_and_synonyms() {
        assert_eq!(canonicalize_label("trash bin").unwrap().token, "trash bin");
        assert_eq!(canonicalize_label("garbage bin").unwrap().token, "trash bin");
        assert_eq!(canonicalize_label("  Garbage   Bin 3 ").unwrap().token, "trash bin 3");
        assert_eq!(canonicalize_label("top_grasp").unwrap().token, "top grasp");
        assert_eq!(canonicalize_label("'fridge'.").unwrap().token, "fridge");
    }

    #[test]
    fn blank_is_rejected() {
        assert_eq!(canonicalize_label("   "), Err(LabelError::EmptyLabel));
        assert_eq!(canonicalize_label("\"\""), Err(LabelError::EmptyLabel));
    }

    #[test]
    fn bare_number_is_not_an_index() {
        let l = canonicalize_label("1").unwrap();
        assert_eq!(l.stem, "1");
        assert_eq!(l.index, None);
    }

    #[test]
    fn table_keys_and_targets_are_canonical() {
        let t = SynonymTable::builtin();
        for (k, v) in &t.labels {
            assert_eq!(&clean(k), k, "label key {k}");
            assert_eq!(&clean(v), v, "label target {v}");
            assert!(!t.labels.contains_key(v), "chained synonym {k} -> {v}");
            assert_eq!(split_index(v).1, None, "indexed target {v}");
        }
        for (field, entries) in &t.fields {
            for (k, v) in entries {
                let canon = t.canonicalize(k).unwrap();
                assert_eq!(&canon.token, k, "{field} key {k} is not canonical");
                assert_eq!(&clean(v), v, "{field} target {v}");
            }
        }
    }

    proptest! {
        #[test]
        fn canonicalize_is_idempotent(raw in "\\PC{0,24}") {
            if let Ok(once) = canonicalize_label(&raw) {
                let twice = canonicalize_label(&once.token).unwrap();
                prop_assert_eq!(once, twice);
            }
        }

        #[test]
        fn canonicalize_is_idempotent_on_label_like_text(
            words in proptest::collection::vec("[A-Za-z_ -]{1,8}", 1..4),
            index in proptest::option::of(0u32..100),
        ) {
            let mut raw = words.join(" ");
            if let Some(i) = index {
                raw.push_str(&format!(" {i}"));
            }
            if let Ok(once) = canonicalize_label(&raw) {
                let twice = canonicalize_label(&once.token).unwrap();
                prop_assert_eq!(once, twice);
            }
        }
    }
}
