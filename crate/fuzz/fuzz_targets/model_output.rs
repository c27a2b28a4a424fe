#![no_main]

use libfuzzer_sys::fuzz_target;
use ossa_core::plan::{emit_plans, parse_model_output};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(report) = parse_model_output(text) {
        // whatever was recovered must survive a second trip unchanged
        let again = parse_model_output(&emit_plans(&report.plans)).expect("emitted plans parse");
        assert_eq!(again.plans, report.plans);
    }
});
