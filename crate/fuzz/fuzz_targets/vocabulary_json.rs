#![no_main]

use coach_core::textproc::Vocabulary;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = Vocabulary::from_json_slice(data) {
        let again = Vocabulary::from_json_slice(v.to_json().as_bytes()).expect("round trip");
        assert_eq!(again.hash(), v.hash());
    }
});
