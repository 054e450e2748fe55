#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Malformed problem files must be rejected with an error, never a panic.
    if let Ok(s) = std::str::from_utf8(data) {
        let _ = sparse_sof::model::load_problem(s);
    }
});
