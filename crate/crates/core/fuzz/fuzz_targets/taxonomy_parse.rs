#![no_main]

use libfuzzer_sys::fuzz_target;
use stimusel::metrics::{EmotionTaxonomy, LexiconClassifier};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(tax) = EmotionTaxonomy::from_json(text) {
        let _ = LexiconClassifier::new(&tax);
    }
});
