#![no_main]

use hierda::io::{matrix_from_bytes, matrix_to_bytes};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = matrix_from_bytes(data) {
        assert_eq!(matrix_to_bytes(&m), data);
    }
});
