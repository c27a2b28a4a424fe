use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::extract::{extract_structured_block, has_unclosed_brace, Block, ExtractError};
use super::jsonish::{parse_jsonish, Entry, Node, Repair};
use super::{normalize_bool, normalize_color, normalize_enum, Field, ObjectManipulationPlan, PlanField};
use crate::labels::canonicalize_label;

/// Unrecoverable syntax inside a structured block.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed block at offset {offset}: {message}")]
pub struct MalformedBlock {
    /// Byte offset into the original model output.
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanParseError {
    #[error(transparent)]
    NoStructuredContent(#[from] ExtractError),
    #[error(transparent)]
    Malformed(#[from] MalformedBlock),
}

/// Everything the parser had to coerce, drop or tolerate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseWarning {
    UnknownKey { object: String, key: String },
    UnmappedValue { object: String, field: String, value: String },
    InvalidValue { object: String, field: String, found: String },
    MissingField { object: String, field: String },
    DuplicateField { object: String, field: String },
    DuplicateObject { object: String },
    DiscardedEntry { key: String, reason: String },
    Repaired { what: String },
    SkippedBlock { offset: usize, message: String },
    /// The output ends inside an unterminated block.
    Truncated,
}

impl fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseWarning::UnknownKey { object, key } => write!(f, "object '{object}': unknown key '{key}'"),
            ParseWarning::UnmappedValue { object, field, value } => {
                write!(f, "object '{object}': unmapped value '{value}' for {field}")
            }
            ParseWarning::InvalidValue { object, field, found } => {
                write!(f, "object '{object}': {found} is not a valid {field}")
            }
            ParseWarning::MissingField { object, field } => write!(f, "object '{object}': missing {field}"),
            ParseWarning::DuplicateField { object, field } => {
                write!(f, "object '{object}': {field} given twice, last value kept")
            }
            ParseWarning::DuplicateObject { object } => {
                write!(f, "object '{object}' planned twice, last occurrence kept")
            }
            ParseWarning::DiscardedEntry { key, reason } => write!(f, "discarded '{key}': {reason}"),
            ParseWarning::Repaired { what } => write!(f, "tolerated {what}"),
            ParseWarning::Truncated => f.write_str("output is truncated; the unterminated entry was dropped"),
            ParseWarning::SkippedBlock { offset, message } => {
                write!(f, "skipped malformed block at offset {offset}: {message}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub plans: Vec<ObjectManipulationPlan>,
    pub warnings: Vec<ParseWarning>,
    /// Top-level entries that did not become a plan (non-records, blank
    /// names, superseded duplicates, skipped blocks).
    pub discarded_fragments: usize,
}

impl ParseReport {
    pub fn warning_strings(&self) -> Vec<String> {
        self.warnings.iter().map(ToString::to_string).collect()
    }

    fn push_plan(&mut self, plan: ObjectManipulationPlan) {
        if let Some(i) = self.plans.iter().position(|p| p.name == plan.name) {
            self.plans.remove(i);
            self.discarded_fragments += 1;
            self.warnings.push(ParseWarning::DuplicateObject { object: plan.name.clone() });
        }
        self.plans.push(plan);
    }

    /// Append another report, resolving duplicate names in favour of `other`.
    pub fn merge(&mut self, other: ParseReport) {
        self.warnings.extend(other.warnings);
        self.discarded_fragments += other.discarded_fragments;
        for plan in other.plans {
            self.push_plan(plan);
        }
    }
}

const WRAPPER_KEYS: &[&str] = &["plans", "plan", "objects", "object manipulation plans", "omps", "result", "results"];
const NAME_KEYS: &[&str] = &["name", "object", "object name"];

/// Parse one structured block into plans: one per top-level key.
pub fn parse_plans(block: &Block) -> Result<ParseReport, MalformedBlock> {
    let (text, shift) = if block.bare_entries {
        (format!("{{{}}}", block.text), 1)
    } else {
        (block.text.clone(), 0)
    };
    let (node, repairs) = parse_jsonish(&text).map_err(|e| MalformedBlock {
        offset: block.offset + e.offset.saturating_sub(shift),
        message: e.message,
    })?;
    let mut report = ParseReport::default();
    for r in repairs {
        if r != Repair::TrailingContent || !block.bare_entries {
            report.warnings.push(ParseWarning::Repaired { what: r.to_string() });
        }
    }
    let source = |e: &Entry| text[e.start..e.end].to_string();
    match unwrap_container(&node) {
        Node::Object(entries) if is_flat_record(entries) => {
            if !entries.iter().any(|e| PlanField::from_key(&e.key).is_some()) {
                return Err(MalformedBlock { offset: block.offset, message: "record has no plan fields".into() });
            }
            let name = record_name(entries).unwrap_or_default();
            collect_record(&mut report, &name, entries, text.trim().to_string());
        }
        Node::Object(entries) => {
            for entry in entries {
                match &entry.value {
                    Node::Object(fields) => collect_record(&mut report, &entry.key, fields, source(entry)),
                    other => {
                        report.discarded_fragments += 1;
                        report.warnings.push(ParseWarning::DiscardedEntry {
                            key: entry.key.clone(),
                            reason: format!("expected an object record, found {}", other.kind()),
                        });
                    }
                }
            }
        }
        Node::Array(items) => {
            for item in items {
                match item {
                    Node::Object(fields) => {
                        let name = record_name(fields).unwrap_or_default();
                        collect_record(&mut report, &name, fields, String::new());
                    }
                    other => {
                        report.discarded_fragments += 1;
                        report.warnings.push(ParseWarning::DiscardedEntry {
                            key: String::from("[array item]"),
                            reason: format!("expected an object record, found {}", other.kind()),
                        });
                    }
                }
            }
        }
        other => {
            return Err(MalformedBlock {
                offset: block.offset,
                message: format!("expected an object, found {}", other.kind()),
            })
        }
    }
    Ok(report)
}

/// Extract every block from model output and parse them all. Malformed
/// blocks are skipped with a warning unless every block is malformed.
pub fn parse_model_output(text: &str) -> Result<ParseReport, PlanParseError> {
    let blocks = extract_structured_block(text)?;
    let mut report = ParseReport::default();
    let mut first_error = None;
    let mut parsed_any = false;
    for block in &blocks {
        match parse_plans(block) {
            Ok(r) => {
                parsed_any = true;
                report.merge(r);
            }
            Err(e) => {
                report.discarded_fragments += 1;
                report.warnings.push(ParseWarning::SkippedBlock { offset: e.offset, message: e.message.clone() });
                first_error.get_or_insert(e);
            }
        }
    }
    if parsed_any && has_unclosed_brace(text) {
        report.discarded_fragments += 1;
        report.warnings.push(ParseWarning::Truncated);
    }
    match (parsed_any, first_error) {
        (false, Some(e)) => Err(e.into()),
        _ => Ok(report),
    }
}

/// Descend through a single wrapper key such as `{"plans": {...}}`.
fn unwrap_container(node: &Node) -> &Node {
    let mut current = node;
    for _ in 0..4 {
        match current {
            Node::Object(entries) if entries.len() == 1 => {
                let key = canonicalize_label(&entries[0].key).map(|l| l.token).unwrap_or_default();
                let inner = &entries[0].value;
                // {"plan": {"state": ...}} is an object that happens to be named "plan"
                let wraps = match inner {
                    Node::Array(_) => true,
                    Node::Object(fields) => !fields.iter().any(|f| PlanField::from_key(&f.key).is_some()),
                    _ => false,
                };
                if WRAPPER_KEYS.contains(&key.as_str()) && wraps {
                    current = inner;
                    continue;
                }
                return current;
            }
            _ => return current,
        }
    }
    current
}

fn is_name_key(key: &str) -> bool {
    canonicalize_label(key).is_ok_and(|l| NAME_KEYS.contains(&l.token.as_str()))
}

/// A single record `{"name": "apple", "state": ...}` rather than a map of records.
fn is_flat_record(entries: &[Entry]) -> bool {
    entries.iter().any(|e| is_name_key(&e.key))
        && entries.iter().all(|e| !matches!(e.value, Node::Object(_)))
}

fn record_name(entries: &[Entry]) -> Option<String> {
    entries.iter().rev().find(|e| is_name_key(&e.key)).and_then(|e| e.value.as_text())
}

fn collect_record(report: &mut ParseReport, key: &str, fields: &[Entry], raw_source: String) {
    let name = match canonicalize_label(key) {
        Ok(label) => label.token,
        Err(_) => {
            report.discarded_fragments += 1;
            report.warnings.push(ParseWarning::DiscardedEntry {
                key: key.to_string(),
                reason: "object name is empty".into(),
            });
            return;
        }
    };
    let mut plan = ObjectManipulationPlan::unknown(name.clone());
    plan.raw_source = raw_source;
    let mut seen: Vec<PlanField> = Vec::new();
    for entry in fields {
        let Some(field) = PlanField::from_key(&entry.key) else {
            let quiet = is_name_key(&entry.key)
                || canonicalize_label(&entry.key).is_ok_and(|l| l.token == "edible");
            if !quiet {
                report.warnings.push(ParseWarning::UnknownKey { object: name.clone(), key: entry.key.clone() });
            }
            continue;
        };
        if seen.contains(&field) {
            report.warnings.push(ParseWarning::DuplicateField { object: name.clone(), field: field.key().into() });
        } else {
            seen.push(field);
        }
        set_field(report, &mut plan, field, &entry.value);
    }
    for field in PlanField::ALL {
        if !seen.contains(&field) {
            report.warnings.push(ParseWarning::MissingField { object: name.clone(), field: field.key().into() });
        }
    }
    report.push_plan(plan);
}

fn set_field(report: &mut ParseReport, plan: &mut ObjectManipulationPlan, field: PlanField, value: &Node) {
    let object = plan.name.clone();
    let text = match value {
        Node::Bool(b) if field == PlanField::Container => {
            plan.container = Field::Known(*b);
            return;
        }
        // an explicit null is an abstention, not an error
        Node::Null => {
            clear(plan, field);
            return;
        }
        Node::Str(_) | Node::Bare(_) | Node::Num(_) | Node::Bool(_) => value.as_text().unwrap_or_default(),
        other => {
            report.warnings.push(ParseWarning::InvalidValue {
                object,
                field: field.key().into(),
                found: other.kind().into(),
            });
            clear(plan, field);
            return;
        }
    };
    let known = match field {
        PlanField::Color => assign(&mut plan.color, normalize_color(&text).into()),
        PlanField::Size => assign(&mut plan.size, normalize_enum(field, &text)),
        PlanField::Shape => assign(&mut plan.shape, normalize_enum(field, &text)),
        PlanField::Container => assign(&mut plan.container, normalize_bool(&text).into()),
        PlanField::State => assign(&mut plan.state, normalize_enum(field, &text)),
        PlanField::Destination => assign(&mut plan.destination, normalize_enum(field, &text)),
        PlanField::GraspingType => assign(&mut plan.grasping_type, normalize_enum(field, &text)),
        PlanField::PlacingType => assign(&mut plan.placing_type, normalize_enum(field, &text)),
    };
    if !known {
        report.warnings.push(ParseWarning::UnmappedValue { object, field: field.key().into(), value: text });
    }
}

fn assign<T>(slot: &mut Field<T>, value: Field<T>) -> bool {
    let known = !value.is_unknown();
    *slot = value;
    known
}

fn clear(plan: &mut ObjectManipulationPlan, field: PlanField) {
    match field {
        PlanField::Color => plan.color = Field::Unknown,
        PlanField::Size => plan.size = Field::Unknown,
        PlanField::Shape => plan.shape = Field::Unknown,
        PlanField::Container => plan.container = Field::Unknown,
        PlanField::State => plan.state = Field::Unknown,
        PlanField::Destination => plan.destination = Field::Unknown,
        PlanField::GraspingType => plan.grasping_type = Field::Unknown,
        PlanField::PlacingType => plan.placing_type = Field::Unknown,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::emit_plans;
    use crate::scene::{Destination, ObjectState};

    fn parse(text: &str) -> ParseReport {
        parse_model_output(text).unwrap()
    }

    #[test]
    fn well_formed_single_object() {
        let r = parse(r#"{"apple": {"color": "red", "size": "small", "shape": "round", "container": false,
            "state": "intact", "destination": "fridge", "grasping_type": "top grasp", "placing_type": "place"}}"#);
        assert_eq!(r.plans.len(), 1);
        assert!(r.warnings.is_empty(), "{:?}", r.warnings);
        assert!(r.plans[0].state.is(&ObjectState::Intact));
        assert!(r.plans[0].raw_source.starts_with("\"apple\""));
    }

    #[test]
    fn indexed_names() {
        let r = parse(r#"{"plate 1": {"state": "dirty"}, "Plate 2": {"state": "clean"}}"#);
        let names: Vec<_> = r.plans.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["plate 1", "plate 2"]);
    }

    #[test]
    fn unmapped_state_is_unknown_with_warning() {
        let r = parse(r#"{"apple": {"state": "sliced"}}"#);
        assert!(r.plans[0].state.is_unknown());
        assert!(r.warning_strings().iter().any(|w| w.contains("unmapped value 'sliced'")));
    }

    #[test]
    fn every_top_level_key_is_accounted_for() {
        let r = parse(r#"{"apple": {"state": "intact"}, "note": "done", "": {"state": "clean"}, "apple": {"state": "peel"}}"#);
        assert_eq!(r.plans.len(), 1);
        assert!(r.plans[0].state.is(&ObjectState::Peel));
        assert_eq!(r.plans.len() + r.discarded_fragments, 4);
    }

    #[test]
    fn object_named_like_a_wrapper() {
        let r = parse(r#"{"plan": {"state": "clean", "destination": "cupboard"}}"#);
        assert_eq!(r.plans.len(), 1);
        assert_eq!(r.plans[0].name, "plan");
        let r = parse(r#"{"plans": {"plan": {"state": "clean"}, "cup": {"state": "dirty"}}}"#);
        assert_eq!(r.plans.len(), 2);
    }

    #[test]
    fn wrapper_and_array_forms() {
        let r = parse(r#"{"plans": [{"name": "cup", "state": "dirty", "destination": "dishwasher"}, 3]}"#);
        assert_eq!(r.plans.len(), 1);
        assert_eq!(r.plans[0].name, "cup");
        assert!(r.plans[0].destination.is(&Destination::Dishwasher));
        assert_eq!(r.discarded_fragments, 1);
        let r = parse(r#"{"name": "fork", "state": "clean"}"#);
        assert_eq!(r.plans[0].name, "fork");
    }

    #[test]
    fn malformed_block_reports_offset() {
        let text = "prefix {\"apple\": {\"state\" \"intact\"}}";
        match parse_model_output(text) {
            Err(PlanParseError::Malformed(e)) => assert_eq!(e.offset, 26),
            other => panic!("expected malformed, got {other:?}"),
        }
    }

    #[test]
    fn malformed_block_is_skipped_when_others_parse() {
        let text = "{\"apple\": {\"state\" \"intact\"}}\n{\"cup\": {\"state\": \"clean\"}}";
        let r = parse(text);
        assert_eq!(r.plans.len(), 1);
        assert_eq!(r.discarded_fragments, 1);
    }

    #[test]
    fn emitted_plans_reparse_without_warnings() {
        let r = parse(r#"{"apple": {"color": "red", "size": "small", "shape": "round", "container": false,
            "state": "intact", "destination": "fridge", "grasping_type": "top grasp", "placing_type": "place"}}"#);
        let again = parse(&emit_plans(&r.plans));
        assert_eq!(again.plans, r.plans);
        assert!(again.warnings.is_empty());
    }
}
