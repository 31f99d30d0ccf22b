#![no_main]

use lctlab::harness::SweepSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = SweepSpec::from_json(text) {
            let _ = spec.entries();
        }
    }
});
