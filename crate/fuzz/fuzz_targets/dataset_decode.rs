#![no_main]

use ccl_core::data::LabeledDataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = LabeledDataset::from_bytes(data) {
        let _ = ds.train_set();
        let _ = ds.test_set();
    }
});
