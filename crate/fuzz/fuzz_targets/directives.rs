#![no_main]

use hpk_core::slurm::directives::{canonical_flag, parse_mem_mib, parse_time_minutes, script_directives};
use hpk_core::slurm::header_demand;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(script) = std::str::from_utf8(data) else { return };
    for (flag, value) in script_directives(script) {
        assert_eq!(canonical_flag(&flag), flag);
        if let Some(value) = value {
            let _ = parse_mem_mib(&value);
            let _ = parse_time_minutes(&value);
        }
    }
    let _ = header_demand(script);
});
