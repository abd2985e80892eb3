#![no_main]

use hierda::io::{fields_from_bytes, fields_to_bytes};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(fields) = fields_from_bytes(data) {
        assert_eq!(fields_to_bytes(&fields), data);
    }
});
