#![no_main]

use hpk_core::manifest::{parse_manifest, serialize_manifest, Resource};
use hpk_core::store::Store;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(docs) = parse_manifest(text) else { return };
    let resources: Vec<Resource> = docs.into_iter().filter_map(|d| d.outcome.ok()).collect();

    // Whatever parses must survive a serialize/parse round trip.
    let again = serialize_manifest(&resources);
    let reparsed: Vec<Resource> = parse_manifest(&again)
        .expect("serialized manifest parses")
        .into_iter()
        .map(|d| d.outcome.expect("serialized document parses"))
        .collect();
    assert_eq!(reparsed.len(), resources.len());

    let mut store = Store::new();
    for resource in resources {
        let _ = store.put(resource);
    }
    store.bind_pending_pods();
});
