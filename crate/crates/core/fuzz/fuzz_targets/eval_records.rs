#![no_main]

use libfuzzer_sys::fuzz_target;
use stimusel::metrics::parse_records;

fuzz_target!(|data: &[u8]| {
    let _ = parse_records(data);
});
