#![no_main]

use ccl_core::metrics::Taxonomy;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(tax) = Taxonomy::from_json(text) {
        let leaves: Vec<String> = tax.leaves().map(str::to_string).collect();
        for a in leaves.iter().take(8) {
            for b in leaves.iter().take(8) {
                tax.lca_edges(a, b).expect("leaves of a parsed taxonomy have an ancestor");
            }
        }
    }
});
