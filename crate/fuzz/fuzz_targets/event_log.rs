#![no_main]

use coach_core::recommend::replay;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = replay(data);
});
