#![no_main]

use coach_core::textproc::TfidfModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = TfidfModel::from_json_slice(data) {
        let doc: Vec<String> = m.tokens().iter().take(8).cloned().collect();
        let v = m.transform(&doc);
        assert!(v.iter().all(|(_, x)| x.is_finite()));
    }
});
