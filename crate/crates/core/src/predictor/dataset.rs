//! Synthetic supervision by masking out occurred events.
//!
//! Each sample draws an "occurred" set top-down from the roots following
//! the gates (AND takes every child, XOR exactly one, OR and NONE a random
//! non-empty subset closed under sibling precursors). Occurred events are
//! revealed as matched with probability `1 - mask_fraction`; hidden
//! occurred events are the positives and events that did not occur the
//! negatives.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PredictError;
use crate::matcher::{InstantiatedGraph, NodeState};
use crate::schema::{validate, EventId, Gate, SchemaLibrary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub mask_fraction: f64,
    pub count: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            mask_fraction: 0.5,
            count: 64,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub graph: InstantiatedGraph,
    pub occurred: BTreeSet<EventId>,
    /// 1.0 or 0.0 for every unmatched node.
    pub labels: BTreeMap<EventId, f64>,
}

impl TrainingSample {
    pub fn positives(&self) -> impl Iterator<Item = &EventId> {
        self.labels.iter().filter(|(_, y)| **y == 1.0).map(|(id, _)| id)
    }
}

/// Closes `chosen` under `a > b` relations among `siblings`.
fn close_precursors(chosen: &mut BTreeSet<EventId>, siblings: &[&EventId], lib: &SchemaLibrary) {
    loop {
        let before = chosen.len();
        for r in &lib.relations {
            if chosen.contains(&r.object) && siblings.contains(&&r.subject) {
                chosen.insert(r.subject.clone());
            }
        }
        if chosen.len() == before {
            return;
        }
    }
}

/// Draws one occurred set. Roots always occur.
pub fn sample_occurred(lib: &SchemaLibrary, rng: &mut impl Rng) -> BTreeSet<EventId> {
    let mut occurred = BTreeSet::new();
    let mut stack: Vec<EventId> = lib.roots().into_iter().rev().cloned().collect();
    while let Some(id) = stack.pop() {
        if !occurred.insert(id.clone()) {
            continue;
        }
        let children = lib.children_of(&id);
        if children.is_empty() {
            continue;
        }
        let gate = lib.get(&id).map_or(Gate::None, |e| e.gate);
        let chosen: BTreeSet<EventId> = match gate {
            Gate::And => children.iter().map(|c| (*c).clone()).collect(),
            Gate::Xor => std::iter::once((*children.choose(rng).expect("non-empty")).clone()).collect(),
            Gate::Or | Gate::None => {
                let mut pick: BTreeSet<EventId> = children
                    .iter()
                    .filter(|_| rng.random_bool(0.5))
                    .map(|c| (*c).clone())
                    .collect();
                if pick.is_empty() {
                    pick.insert((*children.choose(rng).expect("non-empty")).clone());
                }
                close_precursors(&mut pick, &children, lib);
                pick
            }
        };
        stack.extend(chosen.into_iter().rev());
    }
    occurred
}

pub fn generate_training_set(lib: &SchemaLibrary, cfg: &DatasetConfig) -> Result<Vec<TrainingSample>, PredictError> {
    if !(0.0..=1.0).contains(&cfg.mask_fraction) {
        return Err(PredictError::InvalidConfig(format!("mask_fraction {} outside [0, 1]", cfg.mask_fraction)));
    }
    if cfg.count == 0 {
        return Err(PredictError::InvalidConfig("count must be at least 1".into()));
    }
    if lib.len() < 3 {
        return Err(PredictError::InvalidConfig(format!("need at least 3 events, library has {}", lib.len())));
    }
    let report = validate(lib);
    if !report.is_valid() {
        return Err(PredictError::InvalidConfig(format!("library is invalid: {:?}", report.error_codes())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.count);
    for _ in 0..cfg.count {
        let occurred = sample_occurred(lib, &mut rng);
        let mut graph = InstantiatedGraph::unmatched(lib);
        let mut labels = BTreeMap::new();
        for id in lib.event_ids() {
            let happened = occurred.contains(id);
            if happened && !rng.random_bool(cfg.mask_fraction) {
                graph.nodes.insert(id.clone(), NodeState::Matched(format!("synthetic:{id}")));
            } else {
                labels.insert(id.clone(), if happened { 1.0 } else { 0.0 });
            }
        }
        out.push(TrainingSample {
            graph,
            occurred,
            labels,
        });
    }
    Ok(out)
}
