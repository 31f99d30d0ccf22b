#![no_main]

use lctlab::checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = checkpoint::decode(data) {
        let again = checkpoint::encode(&model).unwrap();
        assert_eq!(checkpoint::decode(&again).unwrap(), model);
    }
});
