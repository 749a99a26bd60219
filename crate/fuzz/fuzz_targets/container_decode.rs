#![no_main]

use ccl_core::data::container::Container;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // anything that decodes must re-encode to a stable byte form
    if let Ok(c) = Container::from_bytes(data) {
        let bytes = c.to_bytes().expect("decoded container re-encodes");
        let again = Container::from_bytes(&bytes).expect("re-decodes");
        assert_eq!(again.to_bytes().expect("re-encodes"), bytes);
    }
});
