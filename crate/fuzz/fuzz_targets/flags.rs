#![no_main]

use hpk_core::translator::tokenize_flags;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(tokens) = tokenize_flags(text) {
        for token in &tokens {
            assert!(!token.contains('"'));
        }
        // Re-quoting every token must give the same tokens back.
        let quoted: Vec<String> = tokens.iter().map(|t| format!("\"{t}\"")).collect();
        assert_eq!(tokenize_flags(&quoted.join(" ")).unwrap(), tokens);
    }
});
