//! Replays the checked-in fuzz corpus through the properties the fuzz
//! targets assert, so the seeds stay meaningful without a fuzzer.

use std::path::{Path, PathBuf};

use hierda::experiment::ExperimentConfig;
use hierda::io::*;

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn bits(values: &[f64]) -> Vec<u64> {
    values.iter().map(|v| v.to_bits()).collect()
}

#[test]
fn field_csv_seeds_round_trip() {
    let mut parsed = 0;
    for (path, bytes) in seeds("field_csv") {
        let text = String::from_utf8(bytes).unwrap();
        if let Ok(f) = field_from_csv(&text) {
            let again = field_from_csv(&field_to_csv(&f)).unwrap();
            assert_eq!(f.grid(), again.grid(), "{}", path.display());
            assert_eq!(bits(f.values()), bits(again.values()), "{}", path.display());
            parsed += 1;
        }
    }
    assert!(parsed >= 2);
}

#[test]
fn binary_seeds_reencode_exactly() {
    let mut parsed = 0;
    for (_, bytes) in seeds("field_bin") {
        if let Ok(f) = field_from_bytes(&bytes) {
            assert_eq!(field_to_bytes(&f), bytes);
            parsed += 1;
        }
    }
    for (_, bytes) in seeds("fields_stream") {
        if let Ok(fs) = fields_from_bytes(&bytes) {
            assert_eq!(fields_to_bytes(&fs), bytes);
            parsed += 1;
        }
    }
    for (_, bytes) in seeds("matrix_bin") {
        if let Ok(m) = matrix_from_bytes(&bytes) {
            assert_eq!(matrix_to_bytes(&m), bytes);
            parsed += 1;
        }
    }
    assert!(parsed >= 5);
}

#[test]
fn hostile_headers_are_rejected_without_allocating() {
    for (path, bytes) in seeds("fields_stream").into_iter().chain(seeds("matrix_bin")) {
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name.starts_with("huge") {
            assert!(fields_from_bytes(&bytes).is_err());
        }
        if name.starts_with("overflow") {
            assert!(matrix_from_bytes(&bytes).is_err());
        }
    }
}

#[test]
fn config_seeds_resolve_and_reparse() {
    let mut resolved = 0;
    for (path, bytes) in seeds("config_json") {
        let text = String::from_utf8(bytes).unwrap();
        let Ok(cfg) = ExperimentConfig::from_json(&text) else { continue };
        if let Ok(r) = cfg.resolved() {
            let json = serde_json::to_string(&r).unwrap();
            ExperimentConfig::from_json(&json).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            resolved += 1;
        }
    }
    assert!(resolved >= 9);
}

#[test]
fn table_rows_match_the_header() {
    let mut parsed = 0;
    for (_, bytes) in seeds("table_csv") {
        let text = String::from_utf8(bytes).unwrap();
        if let Ok(t) = parse_table(&text, &["label", "stage", "failed"]) {
            assert!(t.rows.iter().all(|r| r.len() == t.header.len()));
            parsed += 1;
        }
    }
    assert_eq!(parsed, 2);
}
