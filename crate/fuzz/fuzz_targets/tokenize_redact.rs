#![no_main]

use std::sync::OnceLock;

use coach_core::corpus::Redactor;
use coach_core::textproc::{tokenize, word_count};
use libfuzzer_sys::fuzz_target;

static REDACTOR: OnceLock<Redactor> = OnceLock::new();

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let redactor = REDACTOR.get_or_init(Redactor::default);
    let clean = redactor.redact(text);
    assert!(!redactor.contains_pii(&clean));
    let _ = tokenize(&clean);
    let _ = word_count(&clean);
});
