#![no_main]

use coach_core::corpus::{parse_question_records, validate_taxonomy, Corpus};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = parse_question_records(data) {
        let report = validate_taxonomy(&records);
        let mut corpus = Corpus::new();
        if corpus.set_questions(records).is_ok() {
            assert!(report.is_valid());
        }
    }
});
