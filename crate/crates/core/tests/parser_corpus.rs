use std::fs;
use std::path::PathBuf;

use ossa_core::labels::canonicalize_label;
use ossa_core::plan::{emit_plans, parse_model_output, Field, ObjectManipulationPlan};
use ossa_core::scene::{Destination, GraspType, LabelEnum, ObjectState, PlaceType, ShapeClass, SizeClass};
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct Expected {
    plans: Vec<ExpectedPlan>,
    warnings: Vec<String>,
    discarded_fragments: usize,
}

#[derive(Deserialize)]
struct ExpectedPlan {
    name: String,
    state: Option<String>,
    destination: Option<String>,
    grasping_type: Option<String>,
    placing_type: Option<String>,
    container: Option<bool>,
}

fn text<T: LabelEnum>(f: &Field<T>) -> Option<String> {
    f.known().map(|v| v.as_str().to_string())
}

fn corpus() -> Vec<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/model_outputs");
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    files.sort();
    files
}

#[test]
fn corpus_matches_frozen_expectations() {
    let files = corpus();
    assert_eq!(files.len(), 24);
    for path in files {
        let label = path.file_name().unwrap().to_string_lossy().to_string();
        let output = fs::read_to_string(&path).unwrap();
        let expected: Expected =
            serde_json::from_str(&fs::read_to_string(path.with_extension("expect.json")).unwrap()).unwrap();
        let report = parse_model_output(&output).unwrap_or_else(|e| panic!("{label}: {e}"));
        assert_eq!(report.warning_strings(), expected.warnings, "{label}");
        assert_eq!(report.discarded_fragments, expected.discarded_fragments, "{label}");
        assert_eq!(report.plans.len(), expected.plans.len(), "{label}");
        for (got, want) in report.plans.iter().zip(&expected.plans) {
            assert_eq!(got.name, want.name, "{label}");
            assert_eq!(text(&got.state), want.state, "{label} {}", want.name);
            assert_eq!(text(&got.destination), want.destination, "{label} {}", want.name);
            assert_eq!(text(&got.grasping_type), want.grasping_type, "{label} {}", want.name);
            assert_eq!(text(&got.placing_type), want.placing_type, "{label} {}", want.name);
            assert_eq!(got.container.get(), want.container, "{label} {}", want.name);
        }
    }
}

#[test]
fn garbage_is_an_error() {
    assert!(parse_model_output("I cannot see any objects.").is_err());
    assert!(parse_model_output("{{{{").is_err());
}

fn field<T: LabelEnum>() -> impl Strategy<Value = Field<T>> {
    prop_oneof![
        1 => Just(Field::Unknown),
        6 => proptest::sample::select(T::ALL).prop_map(Field::Known),
    ]
}

fn plan() -> impl Strategy<Value = ObjectManipulationPlan> {
    let name = ("[a-z]{2,8}( [a-z]{2,8})?", proptest::option::of(1u32..9))
        .prop_map(|(n, i)| match i {
            Some(i) => format!("{n} {i}"),
            None => n,
        })
        // the parser maps name synonyms ("bow" -> "bowl"); only canonical names round-trip
        .prop_filter("canonical name", |n| canonicalize_label(n).is_ok_and(|l| &l.token == n));
    let color = prop_oneof![1 => Just(Field::Unknown), 6 => "[a-z]{3,7}".prop_map(Field::Known)];
    let container = prop_oneof![1 => Just(Field::Unknown), 6 => any::<bool>().prop_map(Field::Known)];
    (
        name,
        color,
        field::<SizeClass>(),
        field::<ShapeClass>(),
        container,
        field::<ObjectState>(),
        field::<Destination>(),
        field::<GraspType>(),
        field::<PlaceType>(),
    )
        .prop_map(|(name, color, size, shape, container, state, destination, grasping_type, placing_type)| {
            ObjectManipulationPlan {
                name,
                color,
                size,
                shape,
                container,
                state,
                destination,
                grasping_type,
                placing_type,
                raw_source: String::new(),
            }
        })
}

fn plans() -> impl Strategy<Value = Vec<ObjectManipulationPlan>> {
    proptest::collection::vec(plan(), 1..6).prop_map(|mut v| {
        let mut seen = std::collections::HashSet::new();
        v.retain(|p| seen.insert(p.name.clone()));
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn emit_then_parse_is_identity(ps in plans()) {
        let doc = emit_plans(&ps);
        let report = parse_model_output(&doc).unwrap();
        prop_assert_eq!(&report.plans, &ps);
        prop_assert_eq!(report.discarded_fragments, 0);
    }

    #[test]
    fn emitted_doc_survives_prose_and_fence(ps in plans(), before in "[A-Za-z ,.]{0,40}", after in "[A-Za-z ,.]{0,40}") {
        let wrapped = format!("{before}\n```json\n{}\n```\n{after}", emit_plans(&ps));
        prop_assert_eq!(parse_model_output(&wrapped).unwrap().plans, ps);
    }
}
