#![allow(dead_code)]

use discovery_core::event::Event;
use discovery_core::ni::Digest;
use discovery_core::sanitiser::{sanitise, SanitisedEvent, SanitiserConfig};
use discovery_core::store::DiscoveryStore;
use sha2::{Digest as _, Sha256};

pub const DEAD_DROP: &str = "https://discovery.example.org/dead_drop";

pub fn config() -> SanitiserConfig {
    SanitiserConfig::new(DEAD_DROP).unwrap()
}

pub fn sanitise_all(events: &[Event]) -> Vec<SanitisedEvent> {
    let cfg = config();
    events.iter().map(|e| sanitise(e, &cfg).unwrap().event).collect()
}

pub fn store_of(events: &[Event]) -> DiscoveryStore {
    let store = DiscoveryStore::new();
    for e in sanitise_all(events) {
        store.put(e).unwrap();
    }
    store
}

/// SHA-256 computed without going through the crate's hashing code.
pub fn sha256(bytes: &[u8]) -> Digest {
    hex::encode(Sha256::digest(bytes)).parse().unwrap()
}
