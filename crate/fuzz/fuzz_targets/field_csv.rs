#![no_main]

use hierda::io::{field_from_csv, field_to_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(field) = field_from_csv(text) else { return };
    // Whatever parses must survive a write/read cycle bit for bit.
    let again = field_from_csv(&field_to_csv(&field)).expect("re-encoded field parses");
    assert_eq!(field.grid(), again.grid());
    let bits = |f: &hierda::field::Field| f.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&field), bits(&again));
});
