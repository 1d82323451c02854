#![no_main]
use crest_core::corpus::parse_token_list;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(tokens) = parse_token_list(text) {
            assert!(!tokens.is_empty());
        }
    }
});
