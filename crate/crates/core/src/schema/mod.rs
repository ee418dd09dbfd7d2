//! Schema data model.
//!
//! A [`SchemaLibrary`] is a forest of events: each event lists its
//! sub-events as weighted participants joined by a logical gate, and
//! temporal `BEFORE` relations order events (normally siblings).
//!
//! Two concrete syntaxes are supported: the structured SDF document
//! ([`sdf`]) and the line-oriented block text that language models are
//! prompted to emit ([`hierarchy`]).

mod id;
pub mod hierarchy;
pub mod sdf;
pub mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use hierarchy::{parse_hierarchy_text, HierarchyError, HierarchyParse, ParseWarning};
pub use id::{normalize_name, EventId, InvalidEventId};
pub use sdf::{parse_sdf, serialize_sdf, serialize_sdf_pretty, SdfError};
pub use validate::{validate, Issue, IssueCode, IssueSubject, ValidationReport};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gate {
    And,
    Or,
    Xor,
    #[default]
    None,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::And, Gate::Or, Gate::Xor, Gate::None];

    pub fn token(self) -> &'static str {
        match self {
            Gate::And => "and",
            Gate::Or => "or",
            Gate::Xor => "xor",
            Gate::None => "none",
        }
    }

    /// Case-insensitive; `xxxx` and the empty string mean "no gate".
    pub fn parse_token(s: &str) -> Option<Gate> {
        match s.trim().to_ascii_lowercase().as_str() {
            "and" => Some(Gate::And),
            "or" => Some(Gate::Or),
            "xor" => Some(Gate::Xor),
            "none" | "xxxx" | "" => Some(Gate::None),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Gate::And => 0,
            Gate::Or => 1,
            Gate::Xor => 2,
            Gate::None => 3,
        }
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub child_id: EventId,
    /// In `[0, 1]`; higher means the sub-event matters more to its parent.
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaEvent {
    pub id: EventId,
    pub name: String,
    pub description: String,
    pub participants: Vec<Participant>,
    pub gate: Gate,
}

impl SchemaEvent {
    pub fn new(id: EventId, name: impl Into<String>) -> Self {
        Self {
            id,
            name: name.into(),
            description: String::new(),
            participants: Vec::new(),
            gate: Gate::None,
        }
    }

    pub fn normalized_name(&self) -> String {
        normalize_name(&self.name)
    }
}

/// `subject` happens before `object`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TemporalRelation {
    pub subject: EventId,
    pub object: EventId,
}

impl TemporalRelation {
    pub fn new(subject: EventId, object: EventId) -> Self {
        Self { subject, object }
    }
}

impl fmt::Display for TemporalRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}>{}", self.subject, self.object)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemaLibrary {
    pub contexts: Vec<String>,
    pub events: BTreeMap<EventId, SchemaEvent>,
    pub relations: Vec<TemporalRelation>,
}

impl SchemaLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty() && self.events.is_empty() && self.relations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn get(&self, id: &EventId) -> Option<&SchemaEvent> {
        self.events.get(id)
    }

    pub fn insert(&mut self, event: SchemaEvent) -> Option<SchemaEvent> {
        self.events.insert(event.id.clone(), event)
    }

    /// Adds a context string unless already present.
    pub fn add_context(&mut self, context: &str) {
        if !self.contexts.iter().any(|c| c == context) {
            self.contexts.push(context.to_string());
        }
    }

    pub fn event_ids(&self) -> impl Iterator<Item = &EventId> {
        self.events.keys()
    }

    /// First parent of every child that resolves to an existing event,
    /// visiting parents in id order.
    pub fn parent_map(&self) -> BTreeMap<EventId, EventId> {
        let mut parents = BTreeMap::new();
        for ev in self.events.values() {
            for p in &ev.participants {
                if self.events.contains_key(&p.child_id) && p.child_id != ev.id {
                    parents
                        .entry(p.child_id.clone())
                        .or_insert_with(|| ev.id.clone());
                }
            }
        }
        parents
    }

    pub fn parent_of(&self, id: &EventId) -> Option<&EventId> {
        self.events
            .values()
            .find(|ev| ev.participants.iter().any(|p| &p.child_id == id) && &ev.id != id)
            .map(|ev| &ev.id)
    }

    pub fn children_of(&self, id: &EventId) -> Vec<&EventId> {
        self.events
            .get(id)
            .map(|ev| {
                ev.participants
                    .iter()
                    .map(|p| &p.child_id)
                    .filter(|c| self.events.contains_key(*c))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Importance of `id` as a participant of its parent (0 for roots).
    pub fn importance_of(&self, id: &EventId) -> f64 {
        self.events
            .values()
            .flat_map(|ev| ev.participants.iter())
            .find(|p| &p.child_id == id)
            .map(|p| p.importance)
            .unwrap_or(0.0)
    }

    pub fn roots(&self) -> Vec<&EventId> {
        let parents = self.parent_map();
        self.events
            .keys()
            .filter(|id| !parents.contains_key(*id))
            .collect()
    }

    /// Hierarchy depth of every event (roots are 0). Cycles are cut at
    /// the first revisit.
    pub fn depths(&self) -> BTreeMap<EventId, usize> {
        let parents = self.parent_map();
        let mut depths = BTreeMap::new();
        for id in self.events.keys() {
            let mut d = 0;
            let mut cur = id;
            let mut seen = BTreeSet::new();
            while let Some(p) = parents.get(cur) {
                if !seen.insert(p.clone()) {
                    break;
                }
                d += 1;
                cur = p;
            }
            depths.insert(id.clone(), d);
        }
        depths
    }

    /// Name lookup for an id, if the event exists.
    pub fn name_of(&self, id: &EventId) -> Option<&str> {
        self.events.get(id).map(|e| e.name.as_str())
    }
}
