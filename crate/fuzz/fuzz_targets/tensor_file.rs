#![no_main]

use coach_core::textproc::{decode_batch, encode_batch};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(pairs) = decode_batch(data) {
        let bytes = encode_batch(&pairs).expect("decoded batch re-encodes");
        assert_eq!(decode_batch(&bytes).expect("round trip"), pairs);
    }
});
