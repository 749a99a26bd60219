#![no_main]

use ccl_core::data::container::Container;
use ccl_core::model::{AdamConfig, ModelPair};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Container::from_bytes(data) {
        let _ = ModelPair::from_container(&c, AdamConfig::default());
    }
});
