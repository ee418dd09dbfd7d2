//! Parser for the block text emitted by the induction prompt.
//!
//! ```text
//! Event 1
//! event: lithium-ion recycling
//! event_id: ev1
//! description: ...
//! participants: pyrometallurgical ev1.1_P1, hydrometallurgical ev1.2_P1
//! Gate: or
//! Relations: ev1.1>ev1.2
//! ```
//!
//! `xxxx` marks an empty field. Participants without a block of their own
//! become stub events named after the participant text. Lines that do not
//! fit the format are skipped and reported as warnings.

use std::collections::BTreeMap;

use super::{EventId, Gate, Participant, SchemaEvent, SchemaLibrary, TemporalRelation};

const EMPTY_MARKER: &str = "xxxx";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HierarchyError {
    #[error("line {line}: malformed block: {reason}")]
    MalformedBlock { line: usize, reason: String },
    #[error("line {line}: bad importance suffix in {entry:?}")]
    BadImportanceSuffix { line: usize, entry: String },
    #[error("line {line}: bad relation syntax {entry:?}")]
    BadRelationSyntax { line: usize, entry: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum WarningKind {
    UnknownLine,
    UnknownGate,
    MissingImportance,
    ParticipantWithoutId,
    StubCreated,
    NameMismatch,
    UnresolvedRelation,
    MissingName,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseWarning {
    /// 1-based line number, when the warning comes from a specific line.
    pub line: Option<usize>,
    pub kind: WarningKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyParse {
    pub library: SchemaLibrary,
    pub warnings: Vec<ParseWarning>,
    /// Number of `Event`/`Subevent` blocks found in the text.
    pub blocks: usize,
}

#[derive(Default)]
struct Block {
    header_line: usize,
    name: Option<String>,
    id: Option<EventId>,
    description: String,
    participants: Vec<(Participant, String)>,
    gate: Gate,
    relations: Vec<TemporalRelation>,
}

fn is_header(line: &str) -> bool {
    let mut words = line.split_whitespace();
    let (Some(head), Some(num)) = (words.next(), words.next()) else {
        return false;
    };
    if words.next().is_some() {
        return false;
    }
    let head = head.to_ascii_lowercase().replace(['-', '_'], "");
    let is_event_word = head
        .strip_suffix("event")
        .is_some_and(|prefix| prefix.len() % 3 == 0 && prefix.as_bytes().chunks(3).all(|c| c == b"sub"));
    is_event_word && num.chars().all(|c| c.is_ascii_digit() || c == '.') && num.starts_with(|c: char| c.is_ascii_digit())
}

/// Splits `key: value`, tolerating markdown emphasis and bullets around the key.
fn split_key(line: &str) -> Option<(String, &str)> {
    let (key, value) = line.split_once(':')?;
    let key = key
        .trim()
        .trim_start_matches("- ")
        .trim_matches('*')
        .trim()
        .to_ascii_lowercase();
    Some((key, value.trim()))
}

fn is_name_key(key: &str) -> bool {
    key.strip_suffix("event")
        .is_some_and(|prefix| prefix.len() % 3 == 0 && prefix.as_bytes().chunks(3).all(|c| c == b"sub"))
}

fn parse_participant(
    entry: &str,
    line: usize,
    warnings: &mut Vec<ParseWarning>,
) -> Result<Option<(Participant, String)>, HierarchyError> {
    let entry = entry.trim();
    if entry.is_empty() {
        return Ok(None);
    }
    // the id is the last whitespace-separated token that starts with "ev"
    let (name, token) = match entry.rsplit_once(char::is_whitespace) {
        Some((n, t)) => (n.trim(), t),
        None => ("", entry),
    };
    let (id_text, importance) = match token.split_once("_P") {
        Some((id, imp)) => {
            let value: f64 = imp
                .parse()
                .map_err(|_| HierarchyError::BadImportanceSuffix {
                    line,
                    entry: entry.to_string(),
                })?;
            if !(0.0..=1.0).contains(&value) {
                return Err(HierarchyError::BadImportanceSuffix {
                    line,
                    entry: entry.to_string(),
                });
            }
            (id, value)
        }
        None => {
            if EventId::parse(token).is_ok() {
                warnings.push(ParseWarning {
                    line: Some(line),
                    kind: WarningKind::MissingImportance,
                    message: format!("participant {entry:?} has no _P suffix; importance 1 assumed"),
                });
            }
            (token, 1.0)
        }
    };
    match EventId::parse(id_text) {
        Ok(child_id) => Ok(Some((
            Participant {
                child_id,
                importance,
            },
            name.to_string(),
        ))),
        Err(_) => {
            warnings.push(ParseWarning {
                line: Some(line),
                kind: WarningKind::ParticipantWithoutId,
                message: format!("participant {entry:?} carries no event id; skipped"),
            });
            Ok(None)
        }
    }
}

fn parse_relation(entry: &str, line: usize) -> Result<Option<TemporalRelation>, HierarchyError> {
    let entry = entry.trim();
    if entry.is_empty() {
        return Ok(None);
    }
    let bad = || HierarchyError::BadRelationSyntax {
        line,
        entry: entry.to_string(),
    };
    let (a, b) = entry.split_once('>').ok_or_else(bad)?;
    let subject = EventId::parse(a.trim()).map_err(|_| bad())?;
    let object = EventId::parse(b.trim()).map_err(|_| bad())?;
    Ok(Some(TemporalRelation::new(subject, object)))
}

fn is_empty_marker(value: &str) -> bool {
    value.trim().eq_ignore_ascii_case(EMPTY_MARKER)
}

pub fn parse_hierarchy_text(text: &str) -> Result<HierarchyParse, HierarchyError> {
    let mut warnings = Vec::new();
    let mut blocks: Vec<Block> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() || line.starts_with("```") {
            continue;
        }
        if is_header(line) {
            blocks.push(Block {
                header_line: lineno,
                ..Block::default()
            });
            continue;
        }
        let Some(block) = blocks.last_mut() else {
            warnings.push(ParseWarning {
                line: Some(lineno),
                kind: WarningKind::UnknownLine,
                message: format!("text outside any event block: {line:?}"),
            });
            continue;
        };
        let Some((key, value)) = split_key(line) else {
            warnings.push(ParseWarning {
                line: Some(lineno),
                kind: WarningKind::UnknownLine,
                message: format!("unrecognized line {line:?}"),
            });
            continue;
        };
        match key.as_str() {
            k if is_name_key(k) => {
                if !is_empty_marker(value) && !value.is_empty() {
                    block.name = Some(value.to_string());
                }
            }
            "event_id" | "event id" => {
                let id = EventId::parse(value).map_err(|_| HierarchyError::MalformedBlock {
                    line: lineno,
                    reason: format!("invalid event_id {value:?}"),
                })?;
                block.id = Some(id);
            }
            "description" => {
                if !is_empty_marker(value) {
                    block.description = value.to_string();
                }
            }
            "participants" => {
                if !is_empty_marker(value) {
                    for entry in value.split(',') {
                        if let Some(p) = parse_participant(entry, lineno, &mut warnings)? {
                            block.participants.push(p);
                        }
                    }
                }
            }
            "gate" => match Gate::parse_token(value) {
                Some(g) => block.gate = g,
                None => {
                    warnings.push(ParseWarning {
                        line: Some(lineno),
                        kind: WarningKind::UnknownGate,
                        message: format!("unknown gate {value:?}; treated as none"),
                    });
                    block.gate = Gate::None;
                }
            },
            "relations" => {
                if !is_empty_marker(value) {
                    for entry in value.split(',') {
                        if let Some(r) = parse_relation(entry, lineno)? {
                            block.relations.push(r);
                        }
                    }
                }
            }
            _ => warnings.push(ParseWarning {
                line: Some(lineno),
                kind: WarningKind::UnknownLine,
                message: format!("unknown key {key:?}"),
            }),
        }
    }

    let block_count = blocks.len();
    let mut events: BTreeMap<EventId, SchemaEvent> = BTreeMap::new();
    let mut participant_names: BTreeMap<EventId, String> = BTreeMap::new();
    let mut relations = Vec::new();

    for block in blocks {
        let id = block.id.ok_or_else(|| HierarchyError::MalformedBlock {
            line: block.header_line,
            reason: "missing event_id".into(),
        })?;
        if events.contains_key(&id) {
            return Err(HierarchyError::MalformedBlock {
                line: block.header_line,
                reason: format!("duplicate event_id {id}"),
            });
        }
        let mut participants = Vec::with_capacity(block.participants.len());
        for (p, name) in block.participants {
            if !name.is_empty() {
                participant_names.entry(p.child_id.clone()).or_insert(name);
            }
            participants.push(p);
        }
        let gate = if participants.is_empty() && block.gate != Gate::None {
            warnings.push(ParseWarning {
                line: Some(block.header_line),
                kind: WarningKind::UnknownGate,
                message: format!("{id} has a gate but no participants; gate dropped"),
            });
            Gate::None
        } else {
            block.gate
        };
        let name = match block.name {
            Some(n) => n,
            None => {
                warnings.push(ParseWarning {
                    line: Some(block.header_line),
                    kind: WarningKind::MissingName,
                    message: format!("{id} has no name"),
                });
                String::new()
            }
        };
        relations.extend(block.relations);
        events.insert(
            id.clone(),
            SchemaEvent {
                id,
                name,
                description: block.description,
                participants,
                gate,
            },
        );
    }

    // unnamed blocks borrow the participant text that introduced them
    for ev in events.values_mut() {
        if ev.name.is_empty() {
            ev.name = participant_names
                .get(&ev.id)
                .cloned()
                .unwrap_or_else(|| ev.id.to_string());
        } else if let Some(pname) = participant_names.get(&ev.id) {
            if super::normalize_name(pname) != ev.normalized_name() {
                warnings.push(ParseWarning {
                    line: None,
                    kind: WarningKind::NameMismatch,
                    message: format!(
                        "{} is listed as {pname:?} but its block names it {:?}",
                        ev.id, ev.name
                    ),
                });
            }
        }
    }

    for (child, name) in &participant_names {
        if !events.contains_key(child) {
            warnings.push(ParseWarning {
                line: None,
                kind: WarningKind::StubCreated,
                message: format!("{child} ({name}) has no block; stub created"),
            });
            events.insert(child.clone(), SchemaEvent::new(child.clone(), name.clone()));
        }
    }
    // participants listed without a name still need an event
    let nameless: Vec<EventId> = events
        .values()
        .flat_map(|e| e.participants.iter().map(|p| p.child_id.clone()))
        .filter(|c| !events.contains_key(c))
        .collect();
    for child in nameless {
        warnings.push(ParseWarning {
            line: None,
            kind: WarningKind::StubCreated,
            message: format!("{child} has no block; stub created"),
        });
        events.insert(child.clone(), SchemaEvent::new(child.clone(), child.to_string()));
    }

    let mut library = SchemaLibrary::new();
    for rel in relations {
        if events.contains_key(&rel.subject) && events.contains_key(&rel.object) {
            library.relations.push(rel);
        } else {
            warnings.push(ParseWarning {
                line: None,
                kind: WarningKind::UnresolvedRelation,
                message: format!("relation {rel} references an unknown event; dropped"),
            });
        }
    }
    library.events = events;

    Ok(HierarchyParse {
        library,
        warnings,
        blocks: block_count,
    })
}
