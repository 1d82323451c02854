#![no_main]
use crest_core::corpus::tokenize_plain_text;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let (convs, vocab) = tokenize_plain_text(text);
        for conv in &convs {
            assert!(conv.tokens().iter().all(|&t| (t as usize) < vocab.len()));
        }
    }
});
