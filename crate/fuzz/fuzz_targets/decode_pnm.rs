#![no_main]

use aliascope::data::{decode_pnm, encode_pnm};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(image) = decode_pnm(data) else {
        return;
    };
    let bytes = encode_pnm(&image).expect("decoded image encodes");
    let again = decode_pnm(&bytes).expect("encoded image decodes");
    assert_eq!(image.shape(), again.shape());
    assert_eq!(image.data(), again.data());
});
