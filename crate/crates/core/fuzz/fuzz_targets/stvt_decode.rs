#![no_main]

use libfuzzer_sys::fuzz_target;
use stimusel::tensorio::{decode_tensor, encode_tensor};

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = decode_tensor(data) {
        let again = decode_tensor(&encode_tensor(&t)).expect("re-encoded tensor must decode");
        assert!(again.bit_eq(&t));
    }
});
