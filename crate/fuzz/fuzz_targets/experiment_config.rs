#![no_main]
use crest_core::harness::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = toml::from_str::<ExperimentConfig>(text) {
            let _ = cfg.validate();
        }
    }
});
