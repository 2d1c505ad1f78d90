#![no_main]

use libfuzzer_sys::fuzz_target;
use semrob_core::formats::{attack_csv, parse_attack_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = parse_attack_csv(text) {
        if let Ok(out) = attack_csv(&records) {
            let again = parse_attack_csv(&out).expect("re-parse");
            assert_eq!(again.len(), records.len());
        }
    }
});
