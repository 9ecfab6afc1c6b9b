#![no_main]

use hpk_core::Engine;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(engine) = Engine::from_json(text) {
        let saved = engine.to_json();
        let loaded = Engine::from_json(&saved).expect("saved state loads");
        assert_eq!(loaded.to_json(), saved);
    }
});
