#![no_main]

use coach_core::dataset::SplitManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = SplitManifest::from_json_slice(data) {
        let again = SplitManifest::from_json_slice(m.to_json_pretty().as_bytes()).expect("round trip");
        assert_eq!(again.splits(), m.splits());
    }
});
