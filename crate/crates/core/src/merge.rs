//! Folding many individual schemas into one integrated library.
//!
//! Events are identified across libraries by normalized name. The first
//! library to mention a name decides the event id; later occurrences are
//! folded in with [`merge_event_details`]. Relations are re-pointed through
//! the resulting name-to-id table.
//!
//! The output always validates. Participant links that would give a child
//! a second parent or close a participant cycle are dropped, as are
//! relations that would close a cycle among siblings; every drop is
//! reported as a [`MergeWarning`].

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::schema::{
    normalize_name, validate, EventId, Gate, Participant, SchemaEvent, SchemaLibrary,
    TemporalRelation, ValidationReport,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MergeError {
    #[error("input library {index} is invalid ({} errors)", report.errors.len())]
    InvalidInput {
        index: usize,
        report: ValidationReport,
    },
    #[error("cannot merge event details of {a:?} and {b:?}: names differ")]
    NameMismatch { a: String, b: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MergeWarning {
    GateConflict { event: String, kept: Gate, dropped: Gate },
    SecondParentDropped { child: String, kept_parent: String, dropped_parent: String },
    ParticipantCycleDropped { parent: String, child: String },
    GateCleared { event: String },
    IdReassigned { name: String, source_id: EventId, new_id: EventId },
    RelationDropped { subject: String, object: String, reason: String },
}

/// Normalized event name to canonical id in a merged library.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NameToId(BTreeMap<String, EventId>);

impl NameToId {
    pub fn get(&self, name: &str) -> Option<&EventId> {
        self.0.get(&normalize_name(name))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &EventId)> {
        self.0.iter()
    }
}

/// Normalized name of each event to the smallest id bearing it.
pub fn build_name_to_id(lib: &SchemaLibrary) -> NameToId {
    let mut map = BTreeMap::new();
    for ev in lib.events.values() {
        map.entry(ev.normalized_name()).or_insert_with(|| ev.id.clone());
    }
    NameToId(map)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedParticipant {
    /// Normalized name of the child event.
    pub child: String,
    pub importance: f64,
}

/// An event whose participants are keyed by child name instead of id, so
/// events from different libraries can be compared and combined.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedEvent {
    pub id: EventId,
    pub name: String,
    pub description: String,
    pub gate: Gate,
    pub participants: Vec<NamedParticipant>,
}

impl NamedEvent {
    pub fn from_event(event: &SchemaEvent, lib: &SchemaLibrary) -> Self {
        Self {
            id: event.id.clone(),
            name: event.name.clone(),
            description: event.description.clone(),
            gate: event.gate,
            participants: event
                .participants
                .iter()
                .filter_map(|p| {
                    lib.name_of(&p.child_id).map(|n| NamedParticipant {
                        child: normalize_name(n),
                        importance: p.importance,
                    })
                })
                .collect(),
        }
    }

    pub fn key(&self) -> String {
        normalize_name(&self.name)
    }
}

/// Combines two same-named events: `a` keeps its id, description and gate
/// unless they are empty; participants are unioned by child name keeping
/// the larger importance.
pub fn merge_event_details(
    a: &NamedEvent,
    b: &NamedEvent,
) -> Result<(NamedEvent, Vec<MergeWarning>), MergeError> {
    if a.key() != b.key() {
        return Err(MergeError::NameMismatch {
            a: a.name.clone(),
            b: b.name.clone(),
        });
    }
    let mut warnings = Vec::new();
    let description = if a.description.is_empty() {
        b.description.clone()
    } else {
        a.description.clone()
    };
    let gate = match (a.gate, b.gate) {
        (Gate::None, g) => g,
        (g, Gate::None) => g,
        (ga, gb) => {
            if ga != gb {
                warnings.push(MergeWarning::GateConflict {
                    event: a.key(),
                    kept: ga,
                    dropped: gb,
                });
            }
            ga
        }
    };
    let mut participants = a.participants.clone();
    for p in &b.participants {
        match participants.iter_mut().find(|q| q.child == p.child) {
            Some(q) => q.importance = q.importance.max(p.importance),
            None => participants.push(p.clone()),
        }
    }
    Ok((
        NamedEvent {
            id: a.id.clone(),
            name: a.name.clone(),
            description,
            gate,
            participants,
        },
        warnings,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    pub library: SchemaLibrary,
    pub name_to_id: NameToId,
    pub warnings: Vec<MergeWarning>,
}

pub fn merge(libs: &[SchemaLibrary]) -> Result<SchemaLibrary, MergeError> {
    merge_with_report(libs).map(|o| o.library)
}

struct Slot {
    event: NamedEvent,
    /// Source id and the source parent's name, used for id assignment.
    source_id: EventId,
    source_parent: Option<String>,
}

struct Forest {
    parent: HashMap<String, String>,
}

impl Forest {
    fn is_ancestor(&self, ancestor: &str, of: &str) -> bool {
        let mut cur = of;
        let mut steps = 0;
        while let Some(p) = self.parent.get(cur) {
            if p == ancestor {
                return true;
            }
            cur = p;
            steps += 1;
            if steps > self.parent.len() {
                break;
            }
        }
        false
    }
}

fn reaches(edges: &BTreeMap<EventId, BTreeSet<EventId>>, from: &EventId, to: &EventId) -> bool {
    let mut stack = vec![from];
    let mut seen = BTreeSet::new();
    while let Some(n) = stack.pop() {
        if n == to {
            return true;
        }
        if seen.insert(n) {
            if let Some(next) = edges.get(n) {
                stack.extend(next.iter());
            }
        }
    }
    false
}

pub fn merge_with_report(libs: &[SchemaLibrary]) -> Result<MergeOutcome, MergeError> {
    for (index, lib) in libs.iter().enumerate() {
        let report = validate(lib);
        if !report.is_valid() {
            return Err(MergeError::InvalidInput { index, report });
        }
    }
    let mut warnings = Vec::new();
    let mut merged = SchemaLibrary::new();

    for lib in libs {
        for c in &lib.contexts {
            merged.add_context(c);
        }
    }

    // events, folded by name in library order then id order
    let mut slots: Vec<Slot> = Vec::new();
    let mut slot_of: HashMap<String, usize> = HashMap::new();
    let mut forest = Forest {
        parent: HashMap::new(),
    };
    for lib in libs {
        let parents = lib.parent_map();
        for ev in lib.events.values() {
            let incoming = NamedEvent::from_event(ev, lib);
            let key = incoming.key();
            let idx = match slot_of.get(&key) {
                Some(&i) => {
                    let (folded, w) = merge_event_details(&slots[i].event, &incoming)?;
                    warnings.extend(w);
                    slots[i].event.description = folded.description;
                    slots[i].event.gate = folded.gate;
                    i
                }
                None => {
                    let source_parent = parents
                        .get(&ev.id)
                        .and_then(|p| lib.name_of(p))
                        .map(normalize_name);
                    let mut fresh = incoming.clone();
                    fresh.participants.clear();
                    slots.push(Slot {
                        event: fresh,
                        source_id: ev.id.clone(),
                        source_parent,
                    });
                    slot_of.insert(key.clone(), slots.len() - 1);
                    slots.len() - 1
                }
            };
            // participant links, accepted greedily so the result stays a forest
            for p in incoming.participants {
                let parent_key = &key;
                if &p.child == parent_key || forest.is_ancestor(&p.child, parent_key) {
                    warnings.push(MergeWarning::ParticipantCycleDropped {
                        parent: parent_key.clone(),
                        child: p.child.clone(),
                    });
                    continue;
                }
                match forest.parent.get(&p.child) {
                    Some(existing) if existing != parent_key => {
                        warnings.push(MergeWarning::SecondParentDropped {
                            child: p.child.clone(),
                            kept_parent: existing.clone(),
                            dropped_parent: parent_key.clone(),
                        });
                        continue;
                    }
                    _ => {}
                }
                forest.parent.insert(p.child.clone(), parent_key.clone());
                let parts = &mut slots[idx].event.participants;
                match parts.iter_mut().find(|q| q.child == p.child) {
                    Some(q) => q.importance = q.importance.max(p.importance),
                    None => parts.push(p),
                }
            }
        }
    }

    // ids: first occurrence keeps its id; collisions get a fresh one
    let mut name_to_id: BTreeMap<String, EventId> = BTreeMap::new();
    let mut taken: BTreeSet<EventId> = BTreeSet::new();
    let mut next_top = slots
        .iter()
        .map(|s| s.source_id.parts()[0])
        .max()
        .map_or(1, |m| m + 1);
    for slot in &slots {
        let key = slot.event.key();
        let id = if taken.contains(&slot.source_id) {
            let under = slot
                .source_parent
                .as_ref()
                .and_then(|p| name_to_id.get(p))
                .cloned();
            let new_id = match under {
                Some(parent_id) => (1..)
                    .map(|k| parent_id.child(k))
                    .find(|cand| !taken.contains(cand))
                    .expect("unbounded search"),
                None => {
                    let cand = EventId::from_parts(&[next_top]);
                    next_top += 1;
                    cand
                }
            };
            warnings.push(MergeWarning::IdReassigned {
                name: key.clone(),
                source_id: slot.source_id.clone(),
                new_id: new_id.clone(),
            });
            new_id
        } else {
            slot.source_id.clone()
        };
        taken.insert(id.clone());
        name_to_id.insert(key, id);
    }

    for slot in slots {
        let key = slot.event.key();
        let id = name_to_id[&key].clone();
        let participants: Vec<Participant> = slot
            .event
            .participants
            .iter()
            .map(|p| Participant {
                child_id: name_to_id[&p.child].clone(),
                importance: p.importance,
            })
            .collect();
        let mut gate = slot.event.gate;
        if participants.is_empty() && gate != Gate::None {
            warnings.push(MergeWarning::GateCleared { event: key });
            gate = Gate::None;
        }
        merged.insert(SchemaEvent {
            id: id.clone(),
            name: slot.event.name,
            description: slot.event.description,
            participants,
            gate,
        });
    }

    // relations through the name table, kept acyclic within sibling groups
    let parents = merged.parent_map();
    let mut accepted: BTreeMap<EventId, BTreeSet<EventId>> = BTreeMap::new();
    let mut seen: BTreeSet<TemporalRelation> = BTreeSet::new();
    for lib in libs {
        for rel in &lib.relations {
            let (Some(subject_name), Some(object_name)) =
                (lib.name_of(&rel.subject), lib.name_of(&rel.object))
            else {
                continue;
            };
            let (subject_name, object_name) =
                (normalize_name(subject_name), normalize_name(object_name));
            let (Some(s), Some(o)) = (name_to_id.get(&subject_name), name_to_id.get(&object_name))
            else {
                warnings.push(MergeWarning::RelationDropped {
                    subject: subject_name,
                    object: object_name,
                    reason: "event name not in the merged library".into(),
                });
                continue;
            };
            let remapped = TemporalRelation::new(s.clone(), o.clone());
            if seen.contains(&remapped) {
                continue;
            }
            if s == o {
                warnings.push(MergeWarning::RelationDropped {
                    subject: subject_name,
                    object: object_name,
                    reason: "both ends merged into one event".into(),
                });
                continue;
            }
            let siblings = parents.get(s) == parents.get(o);
            if siblings && reaches(&accepted, o, s) {
                warnings.push(MergeWarning::RelationDropped {
                    subject: subject_name,
                    object: object_name,
                    reason: "would close a temporal cycle among siblings".into(),
                });
                continue;
            }
            if siblings {
                accepted.entry(s.clone()).or_default().insert(o.clone());
            }
            seen.insert(remapped.clone());
            merged.relations.push(remapped);
        }
    }

    for w in &warnings {
        log::debug!("merge: {w:?}");
    }
    debug_assert!(validate(&merged).is_valid(), "{:?}", validate(&merged));
    Ok(MergeOutcome {
        library: merged,
        name_to_id: NameToId(name_to_id),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::decompose;
    use crate::schema::fixtures::RECYCLING_TEXT;
    use crate::schema::parse_hierarchy_text;

    fn id(s: &str) -> EventId {
        EventId::parse(s).unwrap()
    }

    fn recycling() -> SchemaLibrary {
        let mut lib = parse_hierarchy_text(RECYCLING_TEXT).unwrap().library;
        lib.add_context("recycling");
        lib
    }

    fn named(name: &str, gate: Gate, parts: &[(&str, f64)]) -> NamedEvent {
        NamedEvent {
            id: id("ev1"),
            name: name.into(),
            description: String::new(),
            gate,
            participants: parts
                .iter()
                .map(|(c, i)| NamedParticipant {
                    child: c.to_string(),
                    importance: *i,
                })
                .collect(),
        }
    }

    #[test]
    fn identity_with_empty() {
        let lib = recycling();
        assert_eq!(merge(&[lib.clone(), SchemaLibrary::new()]).unwrap(), lib);
        assert_eq!(merge(&[SchemaLibrary::new(), lib.clone()]).unwrap(), lib);
        assert_eq!(merge(std::slice::from_ref(&lib)).unwrap(), lib);
    }

    #[test]
    fn self_merge_collapses() {
        let lib = recycling();
        let twice = merge(&[lib.clone(), lib.clone()]).unwrap();
        assert_eq!(decompose(&twice), decompose(&lib));
        assert_eq!(twice, lib);
    }

    #[test]
    fn shared_event_unions_participants() {
        let a = parse_hierarchy_text(
            "Event 1\nevent: lithium-ion recycling\nevent_id: ev1\nparticipants: cobalt ev1.1_P0.5, copper ev1.2_P1\nGate: or\n",
        )
        .unwrap()
        .library;
        let b = parse_hierarchy_text(
            "Event 1\nevent: Lithium-ion  recycling\nevent_id: ev1\nparticipants: cobalt ev1.1_P1, nickel ev1.2_P0.25\nGate: and\n",
        )
        .unwrap()
        .library;
        let out = merge_with_report(&[a, b]).unwrap();
        let lib = &out.library;
        let root = lib.get(&id("ev1")).unwrap();
        assert_eq!(root.gate, Gate::Or);
        let names: Vec<(&str, f64)> = root
            .participants
            .iter()
            .map(|p| (lib.name_of(&p.child_id).unwrap(), p.importance))
            .collect();
        assert_eq!(names, [("cobalt", 1.0), ("copper", 1.0), ("nickel", 0.25)]);
        assert!(out
            .warnings
            .iter()
            .any(|w| matches!(w, MergeWarning::GateConflict { .. })));
        // "nickel" collided with ev1.2 and was re-homed under ev1
        assert_eq!(out.name_to_id.get("nickel").unwrap(), &id("ev1.3"));
        assert!(validate(lib).is_valid());
    }

    #[test]
    fn event_details_policies() {
        let a = named("x", Gate::And, &[("c", 0.5)]);
        assert_eq!(merge_event_details(&a, &a).unwrap().0, a);

        let b = named("X ", Gate::None, &[]);
        assert_eq!(merge_event_details(&a, &b).unwrap().0.gate, Gate::And);
        assert_eq!(merge_event_details(&b, &a).unwrap().0.gate, Gate::And);

        let lo = named("x", Gate::None, &[("cobalt", 0.5)]);
        let hi = named("x", Gate::None, &[("cobalt", 1.0)]);
        for (p, q) in [(&lo, &hi), (&hi, &lo)] {
            let m = merge_event_details(p, q).unwrap().0;
            assert_eq!(m.participants, vec![NamedParticipant { child: "cobalt".into(), importance: 1.0 }]);
        }

        let other = named("y", Gate::None, &[]);
        assert!(matches!(
            merge_event_details(&a, &other),
            Err(MergeError::NameMismatch { .. })
        ));
    }

    #[test]
    fn description_first_non_empty() {
        let mut a = named("x", Gate::None, &[]);
        let mut b = named("x", Gate::None, &[]);
        b.description = "from b".into();
        assert_eq!(merge_event_details(&a, &b).unwrap().0.description, "from b");
        a.description = "from a".into();
        assert_eq!(merge_event_details(&a, &b).unwrap().0.description, "from a");
    }

    #[test]
    fn name_to_id_table() {
        let map = build_name_to_id(&recycling());
        assert_eq!(map.get("lithium-ion recycling"), Some(&id("ev1")));
        assert_eq!(map.get("pyrometallurgical"), Some(&id("ev1.1")));
        assert_eq!(map.get("cobalt"), Some(&id("ev1.1.2")));
        assert_eq!(map.len(), 9);
        assert!(build_name_to_id(&SchemaLibrary::new()).is_empty());
    }

    #[test]
    fn name_to_id_prefers_smaller_id() {
        for (first, second) in [("ev2", "ev10"), ("ev10", "ev2")] {
            let mut lib = SchemaLibrary::new();
            lib.insert(SchemaEvent::new(id(first), "Pyrometallurgical"));
            lib.insert(SchemaEvent::new(id(second), "pyrometallurgical "));
            let map = build_name_to_id(&lib);
            assert_eq!(map.len(), 1);
            assert_eq!(map.get("pyrometallurgical"), Some(&id("ev2")));
        }
    }

    #[test]
    fn conflicting_structure_is_repaired() {
        // b reverses a's hierarchy and a's sibling ordering
        let a = parse_hierarchy_text(
            "Event 1\nevent: a\nevent_id: ev1\nparticipants: b ev1.1_P1, c ev1.2_P1\nGate: and\nRelations: ev1.1>ev1.2\n",
        )
        .unwrap()
        .library;
        let b = parse_hierarchy_text(
            "Event 1\nevent: b\nevent_id: ev1\nparticipants: a ev1.1_P1\nGate: or\n\nEvent 2\nevent: d\nevent_id: ev2\nparticipants: c ev2.1_P1, b ev2.2_P1\nGate: xor\nRelations: ev2.1>ev2.2\n",
        )
        .unwrap()
        .library;
        let out = merge_with_report(&[a, b]).unwrap();
        assert!(validate(&out.library).is_valid(), "{:?}", validate(&out.library));
        let kinds: Vec<&str> = out
            .warnings
            .iter()
            .map(|w| match w {
                MergeWarning::ParticipantCycleDropped { .. } => "cycle",
                MergeWarning::SecondParentDropped { .. } => "parent",
                MergeWarning::GateCleared { .. } => "gate",
                MergeWarning::RelationDropped { .. } => "relation",
                MergeWarning::IdReassigned { .. } => "id",
                MergeWarning::GateConflict { .. } => "conflict",
            })
            .collect();
        assert!(kinds.contains(&"cycle"), "{kinds:?}");
        assert!(kinds.contains(&"parent"), "{kinds:?}");
        assert!(kinds.contains(&"gate"), "{kinds:?}");
    }

    #[test]
    fn invalid_input_rejected() {
        let mut bad = recycling();
        bad.events.get_mut(&id("ev1.2")).unwrap().name.clear();
        assert!(matches!(
            merge(&[recycling(), bad]),
            Err(MergeError::InvalidInput { index: 1, .. })
        ));
    }
}
