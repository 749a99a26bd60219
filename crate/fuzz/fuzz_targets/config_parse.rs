#![no_main]

use ccl_core::harness::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = ExperimentConfig::from_toml(text, &[], None);
});
