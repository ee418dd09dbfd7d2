//! Schema Definition File codec.
//!
//! ```text
//! {"@context":[..],
//!  "events":[{"@id":"ev1","name":..,"description":..,
//!             "participants":[{"event_id":"ev1.1","importance":1.0}],
//!             "gate":"or"}],
//!  "relations":[{"relationSubject":"ev1.1","relationObject":"ev1.3"}]}
//! ```
//!
//! Events are written in id order and relations in insertion order, so
//! serialization is deterministic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EventId, Gate, Participant, SchemaEvent, SchemaLibrary, TemporalRelation};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SdfError {
    #[error("malformed SDF document: {0}")]
    MalformedDocument(String),
    #[error("dangling reference to {0}")]
    DanglingReference(String),
    #[error("duplicate event id {0}")]
    DuplicateId(String),
    #[error("importance {value} of participant {child} in {parent} is outside [0, 1]")]
    ImportanceOutOfRange {
        parent: String,
        child: String,
        value: f64,
    },
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct SdfDocument {
    #[serde(rename = "@context")]
    pub context: Vec<String>,
    pub events: Vec<SdfEvent>,
    pub relations: Vec<SdfRelation>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct SdfEvent {
    #[serde(rename = "@id")]
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub participants: Vec<SdfParticipant>,
    #[serde(default = "default_gate")]
    pub gate: String,
}

fn default_gate() -> String {
    Gate::None.token().to_string()
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct SdfParticipant {
    pub event_id: String,
    pub importance: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct SdfRelation {
    #[serde(rename = "relationSubject")]
    pub subject: String,
    #[serde(rename = "relationObject")]
    pub object: String,
}

fn parse_id(s: &str) -> Result<EventId, SdfError> {
    EventId::parse(s).map_err(|e| SdfError::MalformedDocument(e.to_string()))
}

pub fn parse_sdf(document: &str) -> Result<SchemaLibrary, SdfError> {
    let doc: SdfDocument = serde_json::from_str(document)
        .map_err(|e| SdfError::MalformedDocument(e.to_string()))?;
    from_document(doc)
}

/// Same as [`parse_sdf`] for a document already decoded into JSON.
pub fn parse_sdf_value(value: serde_json::Value) -> Result<SchemaLibrary, SdfError> {
    let doc: SdfDocument =
        serde_json::from_value(value).map_err(|e| SdfError::MalformedDocument(e.to_string()))?;
    from_document(doc)
}

fn from_document(doc: SdfDocument) -> Result<SchemaLibrary, SdfError> {
    let mut lib = SchemaLibrary::new();
    for c in &doc.context {
        lib.add_context(c);
    }

    let mut events = BTreeMap::new();
    for ev in doc.events {
        let id = parse_id(&ev.id)?;
        let gate = Gate::parse_token(&ev.gate).ok_or_else(|| {
            SdfError::MalformedDocument(format!("unknown gate {:?} on {}", ev.gate, ev.id))
        })?;
        let mut participants = Vec::with_capacity(ev.participants.len());
        for p in ev.participants {
            let child_id = parse_id(&p.event_id)?;
            if !(0.0..=1.0).contains(&p.importance) {
                return Err(SdfError::ImportanceOutOfRange {
                    parent: ev.id.clone(),
                    child: p.event_id,
                    value: p.importance,
                });
            }
            participants.push(Participant {
                child_id,
                importance: p.importance,
            });
        }
        let event = SchemaEvent {
            id: id.clone(),
            name: ev.name,
            description: ev.description,
            participants,
            gate,
        };
        if events.insert(id, event).is_some() {
            return Err(SdfError::DuplicateId(ev.id));
        }
    }

    for ev in events.values() {
        if let Some(p) = ev.participants.iter().find(|p| !events.contains_key(&p.child_id)) {
            return Err(SdfError::DanglingReference(p.child_id.to_string()));
        }
    }

    for rel in doc.relations {
        let subject = parse_id(&rel.subject)?;
        let object = parse_id(&rel.object)?;
        for end in [&subject, &object] {
            if !events.contains_key(end) {
                return Err(SdfError::DanglingReference(end.to_string()));
            }
        }
        lib.relations.push(TemporalRelation::new(subject, object));
    }
    lib.events = events;
    Ok(lib)
}

pub(crate) fn to_document(lib: &SchemaLibrary) -> SdfDocument {
    SdfDocument {
        context: lib.contexts.clone(),
        events: lib
            .events
            .values()
            .map(|ev| SdfEvent {
                id: ev.id.to_string(),
                name: ev.name.clone(),
                description: ev.description.clone(),
                participants: ev
                    .participants
                    .iter()
                    .map(|p| SdfParticipant {
                        event_id: p.child_id.to_string(),
                        importance: p.importance,
                    })
                    .collect(),
                gate: ev.gate.token().to_string(),
            })
            .collect(),
        relations: lib
            .relations
            .iter()
            .map(|r| SdfRelation {
                subject: r.subject.to_string(),
                object: r.object.to_string(),
            })
            .collect(),
    }
}

/// Compact single-line SDF.
pub fn serialize_sdf(lib: &SchemaLibrary) -> String {
    serde_json::to_string(&to_document(lib)).expect("SDF document always serializes")
}

pub fn serialize_sdf_pretty(lib: &SchemaLibrary) -> String {
    serde_json::to_string_pretty(&to_document(lib)).expect("SDF document always serializes")
}

pub fn to_sdf_value(lib: &SchemaLibrary) -> serde_json::Value {
    serde_json::to_value(to_document(lib)).expect("SDF document always serializes")
}
