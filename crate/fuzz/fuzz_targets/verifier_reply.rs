#![no_main]
use crest_core::harness::external::{parse_reply, resolve_accepted};
use crest_core::token_tree::build_tree;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(reply) = parse_reply(line) else {
        return;
    };
    let draft = build_tree([vec![1, 2, 3], vec![1, 4], vec![5]], 64).flatten();
    if let Ok(path) = resolve_accepted(&draft, &reply) {
        assert_eq!(path.len(), reply.accepted);
    }
});
