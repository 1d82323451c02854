#![no_main]
use crest_core::crest_store::CrestStore;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(store) = CrestStore::from_bytes(data.to_vec()) else {
        return;
    };
    let _ = store.stats();
    if let Ok(entries) = store.entries() {
        for e in entries.iter().take(8) {
            let _ = store.lookup(&e.key);
        }
    }
    let probe: Vec<u32> = data
        .chunks_exact(4)
        .take(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    for n in 1..=probe.len() {
        let _ = store.lookup_traced(&probe[..n]);
    }
});
