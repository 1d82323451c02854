#![no_main]
use crest_core::suffix_store::SuffixStore;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(store) = SuffixStore::from_bytes(data) else {
        return;
    };
    assert_eq!(store.to_bytes(), data);
    let flat = store.flattened();
    assert_eq!(flat.len(), store.token_count());
    let tokens = flat.tokens();
    for n in 1..=tokens.len().min(3) {
        if let Ok(m) = store.find_matches(&tokens[..n], 16) {
            let _ = store.retrieve_continuations(&m, 4);
        }
    }
});
