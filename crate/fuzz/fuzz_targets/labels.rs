#![no_main]

use libfuzzer_sys::fuzz_target;
use ossa_core::labels::canonicalize_label;
use ossa_core::plan::{normalize_value, PlanField};

fuzz_target!(|data: &[u8]| {
    let Some((&selector, rest)) = data.split_first() else { return };
    let Ok(raw) = std::str::from_utf8(rest) else { return };
    if let Ok(label) = canonicalize_label(raw) {
        // canonical form is a fixed point
        assert_eq!(canonicalize_label(&label.token).map(|l| l.token), Ok(label.token.clone()));
    }
    let field = PlanField::ALL[selector as usize % PlanField::ALL.len()];
    let _ = normalize_value(field, raw);
    let _ = PlanField::from_key(raw);
});
