#![no_main]

use hierda::io::parse_table;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(table) = parse_table(text, &["label", "stage", "failed"]) {
        assert!(table.rows.iter().all(|r| r.len() == table.header.len()));
    }
});
