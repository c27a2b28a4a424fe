#![no_main]

use libfuzzer_sys::fuzz_target;
use ossa_core::scene::Dataset;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = Dataset::from_json_str(text);
    }
});
