#![no_main]

use libfuzzer_sys::fuzz_target;
use sparse_sof::model::{load_problem, serialize_problem};

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    let Ok(file) = load_problem(s) else { return };
    let text = serialize_problem(&file.problem, &file.options);
    let again = load_problem(&text).expect("serialized problem reloads");
    assert_eq!(again.problem, file.problem);
    assert_eq!(again.options, file.options);
});
