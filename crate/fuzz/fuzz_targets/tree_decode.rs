#![no_main]
use crest_core::token_tree::TokenTree;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(tree) = TokenTree::decode(data) {
        tree.validate().unwrap();
        let blob = tree.encode().unwrap();
        assert_eq!(TokenTree::decode(&blob).unwrap(), tree);
        assert_eq!(tree.flatten().tokens.len(), tree.size());
    }
});
