#![no_main]

use coach_core::corpus::{ingest_grade, ingest_transcript, parse_record_line, CorpusRecord};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    match parse_record_line(line) {
        Ok(CorpusRecord::Transcript(r)) => {
            let _ = ingest_transcript(r);
        }
        Ok(CorpusRecord::Grade(r)) => {
            if let Ok(g) = ingest_grade(r) {
                let f = g.fraction();
                assert!((0.0..=1.0).contains(&f));
            }
        }
        Err(_) => {}
    }
});
