#![no_main]

use coach_core::neural::read_model;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = read_model(data);
});
