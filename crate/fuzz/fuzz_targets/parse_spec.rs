#![no_main]

use aliascope::nn::parse_spec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(spec) = parse_spec(text) else {
        return;
    };
    let again = parse_spec(&spec.to_text()).expect("printed spec parses");
    assert_eq!(spec, again);
});
