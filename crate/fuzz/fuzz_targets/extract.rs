#![no_main]

use libfuzzer_sys::fuzz_target;
use ossa_core::plan::{extract_structured_block, parse_plans};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(blocks) = extract_structured_block(text) else { return };
    for block in &blocks {
        assert!(block.offset <= text.len());
        let _ = parse_plans(block);
    }
});
