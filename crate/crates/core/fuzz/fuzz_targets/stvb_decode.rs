#![no_main]

use libfuzzer_sys::fuzz_target;
use stimusel::tensorio::{decode_bundle, encode_bundle};
use stimusel::tubes::ScorerWeights;

fuzz_target!(|data: &[u8]| {
    if let Ok(b) = decode_bundle(data) {
        let bytes = encode_bundle(&b);
        assert_eq!(encode_bundle(&decode_bundle(&bytes).unwrap()), bytes);
        let _ = ScorerWeights::from_bundle(&b);
    }
});
