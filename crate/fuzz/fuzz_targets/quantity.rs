#![no_main]

use hpk_core::quantity::{Quantity, ResourceKind};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for kind in [ResourceKind::Cpu, ResourceKind::Memory] {
        if let Ok(q) = Quantity::parse(text, kind) {
            assert_eq!(q.original(), text);
            assert_eq!(Quantity::parse(text, kind).unwrap().value(), q.value());
        }
    }
});
