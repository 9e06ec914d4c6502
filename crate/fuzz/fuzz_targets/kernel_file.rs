//! Kernel tensor decoder: arbitrary bytes must yield a tensor or an error,
//! and anything accepted must re-encode to the same bytes.
#![no_main]

use fiberfrp::kernels::{decode_tensor, encode_tensor};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(tensor) = decode_tensor(data) {
        assert_eq!(encode_tensor(&tensor), data);
    }
});
