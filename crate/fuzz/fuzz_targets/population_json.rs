#![no_main]

use libfuzzer_sys::fuzz_target;
use semrob_core::formats::{population_from_json, population_to_json};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(pop) = population_from_json(text) {
        let again = population_from_json(&population_to_json(&pop)).expect("re-parse");
        assert_eq!(again.codes().to_rows(), pop.codes().to_rows());
    }
});
