#![no_main]

use libfuzzer_sys::fuzz_target;
use stimusel::config::Settings;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(s) = Settings::parse(text) {
        let _ = s.sampler();
        let _ = s.flow();
        let _ = s.geometry();
    }
});
