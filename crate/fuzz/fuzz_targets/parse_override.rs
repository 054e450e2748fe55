#![no_main]

use libfuzzer_sys::fuzz_target;
use sparse_sof::model::{parse_override, AdmmOptions};

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    let Some((key, value)) = s.split_once('=') else { return };
    let mut opts = AdmmOptions::default();
    let before = opts.clone();
    if parse_override(&mut opts, key, value).is_err() {
        // a rejected override leaves the options untouched
        assert_eq!(opts, before);
    } else {
        assert!(opts.validate().is_ok());
    }
});
