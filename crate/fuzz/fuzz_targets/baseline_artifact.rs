#![no_main]

use coach_core::pipeline::BaselineArtifact;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(a) = BaselineArtifact::from_json_slice(data) {
        BaselineArtifact::from_json_slice(a.to_json().as_bytes()).expect("round trip");
    }
});
