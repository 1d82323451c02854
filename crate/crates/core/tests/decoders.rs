//! Decoders fed mutated and truncated encodings must return errors, never
//! panic, and whatever they accept must behave like a well-formed value.

use crest_core::corpus::{
    flatten, parse_corpus, parse_token_list, Conversation, CorpusFormat, Order,
};
use crest_core::crest_store::{compute_entries, encode_store, BuildParams, CrestStore};
use crest_core::harness::external::{parse_reply, resolve_accepted};
use crest_core::ngram_select::top_t_combined;
use crest_core::suffix_store::SuffixStore;
use crest_core::token_tree::{build_tree, TokenTree};
use proptest::prelude::*;

fn sample_store() -> (SuffixStore, Vec<u8>) {
    let convs = vec![
        Conversation::new(vec![vec![1, 2, 3, 4], vec![5, 6]]).unwrap(),
        Conversation::new(vec![vec![1, 2, 7], vec![8, 9, 10, 1, 2, 3]]).unwrap(),
    ];
    let flat = flatten(&convs, Order::FileOrder);
    let rest = SuffixStore::build(&flat, 5).unwrap();
    let sel = top_t_combined(&flat, 2, 4).unwrap();
    let (entries, _) = compute_entries(&sel, &rest, &BuildParams::default()).unwrap();
    let crst = encode_store(&entries, 2, flat.content_hash()).unwrap();
    (rest, crst)
}

#[derive(Debug, Clone)]
enum Mutation {
    Flip(usize, u8),
    Truncate(usize),
    Append(Vec<u8>),
}

fn mutation() -> impl Strategy<Value = Mutation> {
    prop_oneof![
        (any::<usize>(), 1u8..=255).prop_map(|(i, x)| Mutation::Flip(i, x)),
        any::<usize>().prop_map(Mutation::Truncate),
        prop::collection::vec(any::<u8>(), 1..8).prop_map(Mutation::Append),
    ]
}

fn mutate(mut bytes: Vec<u8>, muts: &[Mutation]) -> Vec<u8> {
    for m in muts {
        match m {
            Mutation::Flip(i, x) if !bytes.is_empty() => {
                let i = i % bytes.len();
                bytes[i] ^= x;
            }
            Mutation::Truncate(n) if !bytes.is_empty() => bytes.truncate(n % bytes.len()),
            Mutation::Append(extra) => bytes.extend_from_slice(extra),
            _ => {}
        }
    }
    bytes
}

fn exercise_rest(bytes: &[u8]) {
    if let Ok(store) = SuffixStore::from_bytes(bytes) {
        assert_eq!(store.to_bytes(), bytes);
        let flat = store.flattened();
        let tokens = flat.tokens();
        for n in 1..=tokens.len().min(3) {
            let m = store.find_matches(&tokens[..n], 16).unwrap();
            store.retrieve_continuations(&m, 4);
        }
    }
}

fn exercise_crest(bytes: &[u8]) {
    if let Ok(store) = CrestStore::from_bytes(bytes.to_vec()) {
        let _ = store.stats();
        if let Ok(entries) = store.entries() {
            for e in &entries {
                let _ = store.lookup(&e.key);
            }
        }
        for key in [&[1u32][..], &[1, 2], &[2, 3], &[99]] {
            let _ = store.lookup_traced(key);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3000))]

    #[test]
    fn mutated_rest_never_panics(muts in prop::collection::vec(mutation(), 1..4)) {
        let (rest, _) = sample_store();
        exercise_rest(&mutate(rest.to_bytes(), &muts));
    }

    #[test]
    fn mutated_crest_never_panics(muts in prop::collection::vec(mutation(), 1..4)) {
        let (_, crst) = sample_store();
        exercise_crest(&mutate(crst, &muts));
    }

    #[test]
    fn mutated_tree_never_panics(muts in prop::collection::vec(mutation(), 1..4)) {
        let tree = build_tree([vec![1u32, 2, 3], vec![1, 4], vec![5, 6]], 64);
        if let Ok(t) = TokenTree::decode(&mutate(tree.encode().unwrap(), &muts)) {
            t.validate().unwrap();
            prop_assert_eq!(TokenTree::decode(&t.encode().unwrap()).unwrap(), t);
        }
    }

    #[test]
    fn random_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        exercise_rest(&bytes);
        exercise_crest(&bytes);
        let _ = TokenTree::decode(&bytes);
    }

    #[test]
    fn text_parsers_never_panic(text in "[\\[\\]0-9, \"a-z\\-.e{}:\n]{0,64}") {
        let _ = parse_corpus(&text, CorpusFormat::TokenJson);
        let _ = parse_corpus(&text, CorpusFormat::PlainText);
        if let Ok(tokens) = parse_token_list(&text) {
            prop_assert!(!tokens.is_empty());
        }
        if let Ok(reply) = parse_reply(&text) {
            let draft = build_tree([vec![1u32, 2, 3], vec![1, 4]], 64).flatten();
            let _ = resolve_accepted(&draft, &reply);
        }
    }
}

#[test]
fn unmodified_encodings_decode() {
    let (rest, crst) = sample_store();
    assert_eq!(
        SuffixStore::from_bytes(&rest.to_bytes()).unwrap().chunks(),
        rest.chunks()
    );
    let store = CrestStore::from_bytes(crst).unwrap();
    assert!(store.entry_count() > 0);
    assert!(store.lookup(&[1, 2]).unwrap().is_some());
}

#[test]
fn fuzz_seeds_are_valid_inputs() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus");
    let read = |dir: &str| -> Vec<Vec<u8>> {
        let mut files: Vec<_> = std::fs::read_dir(root.join(dir))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        files.iter().map(|p| std::fs::read(p).unwrap()).collect()
    };
    let text = |b: &[u8]| String::from_utf8(b.to_vec()).unwrap();
    for b in read("token_json") {
        parse_corpus(&text(&b), CorpusFormat::TokenJson).unwrap();
    }
    for b in read("token_list") {
        parse_token_list(&text(&b)).unwrap();
    }
    for b in read("rsds_decode") {
        SuffixStore::from_bytes(&b).unwrap();
    }
    for b in read("crst_decode") {
        let store = CrestStore::from_bytes(b).unwrap();
        assert!(!store.entries().unwrap().is_empty());
    }
    for b in read("tree_decode") {
        TokenTree::decode(&b).unwrap();
    }
    for b in read("experiment_config") {
        toml::from_str::<crest_core::harness::ExperimentConfig>(&text(&b))
            .unwrap()
            .validate()
            .unwrap();
    }
    for b in read("verifier_reply") {
        parse_reply(&text(&b)).unwrap();
    }
}
