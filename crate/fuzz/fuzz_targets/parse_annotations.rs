#![no_main]

use aliascope::biasstat::{category_bias_report, parse_annotations, BinSpec};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(annotations) = parse_annotations(data) {
        let _ = category_bias_report(&annotations, &BinSpec::default());
    }
});
