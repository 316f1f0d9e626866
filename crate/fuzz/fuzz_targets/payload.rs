#![no_main]

use libfuzzer_sys::fuzz_target;
use meshswap::exchange::{decode_payload, encode_payload};

fuzz_target!(|data: &[u8]| {
    if let Ok((patch, cell)) = decode_payload(data) {
        assert_eq!(encode_payload(patch, cell), data);
    }
});
