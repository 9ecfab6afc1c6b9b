#![no_main]

use std::path::Path;

use hpk_core::config::{parse_node_flag, EngineConfig};
use hpk_core::Engine;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_node_flag(text);
    // A base directory that does not exist keeps behavior paths from
    // reading real files.
    if let Ok(config) = EngineConfig::from_yaml(text, Path::new("/nonexistent/hpk-fuzz")) {
        config.validate().expect("parsed config is valid");
        if let Ok(mut engine) = Engine::new(config) {
            let _ = engine.run_to_quiescence();
        }
    }
});
