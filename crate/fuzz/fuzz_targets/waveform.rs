//! Waveform dump decoder: arbitrary bytes must yield a field or an error,
//! and anything accepted must re-encode to the same bytes.
#![no_main]

use fiberfrp::waveform::{decode_waveform, encode_waveform};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(field) = decode_waveform(data) {
        assert_eq!(encode_waveform(&field), data);
    }
});
