#![no_main]

use libfuzzer_sys::fuzz_target;
use semrob_core::formats::{cert_csv, parse_cert_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(results) = parse_cert_csv(text) {
        let again = parse_cert_csv(&cert_csv(&results)).expect("re-parse");
        assert_eq!(again.len(), results.len());
    }
});
