#![no_main]
use crest_core::corpus::{parse_corpus, write_token_json, CorpusFormat};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(convs) = parse_corpus(text, CorpusFormat::TokenJson) else {
        return;
    };
    // Whatever parses must survive a write/parse round trip unchanged.
    let mut out = Vec::new();
    write_token_json(&convs, &mut out).unwrap();
    let again = parse_corpus(std::str::from_utf8(&out).unwrap(), CorpusFormat::TokenJson).unwrap();
    assert_eq!(convs, again);
});
