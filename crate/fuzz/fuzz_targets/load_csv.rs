#![no_main]

use lctlab::data::load_csv_from_reader;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = load_csv_from_reader(data, "label") {
        assert!(ds.n_plus() > 0 && ds.n_minus() > 0);
        assert!(ds.features().as_slice().iter().all(|v| v.is_finite()));
    }
});
