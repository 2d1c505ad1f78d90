#![no_main]

use libfuzzer_sys::fuzz_target;
use semrob_core::formats::basis_from_json;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((basis, _)) = basis_from_json(text) {
        for row in basis.directions().to_rows() {
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9, "row norm {norm}");
        }
    }
});
