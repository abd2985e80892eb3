#![no_main]

use hierda::experiment::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = ExperimentConfig::from_json(text) else { return };
    // Resolving may reject the config but must not panic, and a resolved
    // config must read back as itself.
    if let Ok(resolved) = cfg.resolved() {
        let json = serde_json::to_string(&resolved).expect("serializes");
        ExperimentConfig::from_json(&json).expect("resolved config parses");
    }
});
