//! Seeded inputs shared by the benchmarks.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shield_core::ingest::ExtractedEvent;
use shield_core::matcher::{InstantiatedGraph, NodeState};
use shield_core::pipeline::synthetic_schema;
use shield_core::schema::{EventId, SchemaLibrary};

pub fn schema(n: usize, seed: u64) -> SchemaLibrary {
    synthetic_schema(n, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// A graph with about a fifth of the nodes matched, plus uniform scores.
pub fn scored_graph(lib: &SchemaLibrary, seed: u64) -> (InstantiatedGraph, BTreeMap<EventId, f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = InstantiatedGraph::unmatched(lib);
    for id in lib.event_ids() {
        if rng.random_bool(0.2) {
            g.nodes.insert(id.clone(), NodeState::Matched(id.to_string()));
        }
    }
    let scores = lib.event_ids().map(|i| (i.clone(), rng.random_range(0.0..1.0))).collect();
    (g, scores)
}

/// One extraction per schema event, reusing the event name as trigger.
pub fn extractions(lib: &SchemaLibrary) -> Vec<ExtractedEvent> {
    lib.events
        .values()
        .enumerate()
        .map(|(k, e)| ExtractedEvent::new(format!("x{k}"), "bench", format!("{} reported", e.name)))
        .collect()
}
