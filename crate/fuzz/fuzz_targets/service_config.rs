#![no_main]

use coach_service::ServiceConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = ServiceConfig::from_json_slice(data) {
        let _ = c.listen_addr();
        let _ = c.policy.validate();
    }
});
