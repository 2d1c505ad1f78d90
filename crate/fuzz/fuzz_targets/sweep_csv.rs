#![no_main]

use libfuzzer_sys::fuzz_target;
use semrob_core::formats::{parse_sweep_csv, sweep_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = parse_sweep_csv(text) {
        let again = parse_sweep_csv(&sweep_csv(&rows)).expect("re-parse");
        assert_eq!(again.len(), rows.len());
    }
});
