#![no_main]

use libfuzzer_sys::fuzz_target;
use stimusel::tensorio::{decode_frame, ColorMode};

fuzz_target!(|data: &[u8]| {
    if let Ok(f) = decode_frame(data, ColorMode::Rgb) {
        assert!(f.height > 0 && f.width > 0);
    }
    let _ = decode_frame(data, ColorMode::Gray);
});
