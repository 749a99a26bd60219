#![no_main]

use ccl_core::data::container::Container;
use ccl_core::metrics::Dump;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Container::from_bytes(data) {
        let _ = Dump::from_container(&c);
    }
});
