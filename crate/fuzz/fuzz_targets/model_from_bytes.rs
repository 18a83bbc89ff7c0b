#![no_main]

use aliascope::nn::{from_bytes, to_bytes};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = from_bytes(data) {
        let bytes = to_bytes(&model);
        let again = from_bytes(&bytes).expect("re-encoded model decodes");
        assert_eq!(to_bytes(&again), bytes);
    }
});
