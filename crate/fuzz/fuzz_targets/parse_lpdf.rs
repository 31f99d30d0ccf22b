#![no_main]

use lctlab::sampler::LinearPdf;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(p) = s.parse::<LinearPdf>() {
            let back: LinearPdf = p.to_string().parse().expect("display output parses");
            assert_eq!(back, p);
            for u in [0.0, 0.5, 1.0] {
                let x = p.inverse_cdf(u).unwrap();
                assert!(x >= p.a() && x <= p.b());
            }
        }
    }
});
