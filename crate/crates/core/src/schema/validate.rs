//! Structural validation of a [`SchemaLibrary`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use super::{EventId, Gate, SchemaLibrary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IssueCode {
    // errors
    IdMismatch,
    EmptyName,
    ImportanceOutOfRange,
    DanglingReference,
    DuplicateParticipant,
    MultipleParents,
    CycleInHierarchy,
    GateWithoutParticipants,
    SelfRelation,
    TemporalCycle,
    // warnings
    NonSiblingRelation,
    GlobalTemporalCycle,
    IdPrefixMismatch,
    DuplicateRelation,
}

impl fmt::Display for IssueCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("code serializes");
        f.write_str(s.as_str().unwrap_or("UNKNOWN"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueSubject {
    Event(EventId),
    Relation(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub code: IssueCode,
    pub subject: IssueSubject,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn error_codes(&self) -> Vec<IssueCode> {
        self.errors.iter().map(|i| i.code).collect()
    }
}

struct Collector {
    errors: Vec<Issue>,
    warnings: Vec<Issue>,
}

impl Collector {
    fn error(&mut self, code: IssueCode, subject: IssueSubject, message: String) {
        self.errors.push(Issue {
            code,
            subject,
            message,
        });
    }

    fn warn(&mut self, code: IssueCode, subject: IssueSubject, message: String) {
        self.warnings.push(Issue {
            code,
            subject,
            message,
        });
    }
}

/// Strongly connected components with more than one member, each
/// reported by its smallest member.
fn cycles(nodes: &[EventId], edges: &[(EventId, EventId)]) -> Vec<Vec<EventId>> {
    let index: BTreeMap<&EventId, usize> = nodes.iter().enumerate().map(|(i, n)| (n, i)).collect();
    let mut g = DiGraph::<usize, ()>::new();
    let handles: Vec<_> = (0..nodes.len()).map(|i| g.add_node(i)).collect();
    for (a, b) in edges {
        if let (Some(&ia), Some(&ib)) = (index.get(a), index.get(b)) {
            if ia != ib {
                g.update_edge(handles[ia], handles[ib], ());
            }
        }
    }
    let mut out: Vec<Vec<EventId>> = tarjan_scc(&g)
        .into_iter()
        .filter(|scc| scc.len() > 1)
        .map(|scc| {
            let mut members: Vec<EventId> = scc.iter().map(|n| nodes[g[*n]].clone()).collect();
            members.sort();
            members
        })
        .collect();
    out.sort();
    out
}

fn join(ids: &[EventId]) -> String {
    ids.iter().map(EventId::as_str).collect::<Vec<_>>().join(", ")
}

pub fn validate(lib: &SchemaLibrary) -> ValidationReport {
    let mut c = Collector {
        errors: Vec::new(),
        warnings: Vec::new(),
    };
    let ev = |id: &EventId| IssueSubject::Event(id.clone());

    // parent links that resolve to existing events
    let mut parents: BTreeMap<EventId, Vec<EventId>> = BTreeMap::new();
    let mut hierarchy_edges = Vec::new();

    for (key, event) in &lib.events {
        if key != &event.id {
            c.error(
                IssueCode::IdMismatch,
                ev(key),
                format!("stored under {key} but carries id {}", event.id),
            );
        }
        if event.name.trim().is_empty() {
            c.error(IssueCode::EmptyName, ev(key), format!("{key} has an empty name"));
        }
        if event.participants.is_empty() && event.gate != Gate::None {
            c.error(
                IssueCode::GateWithoutParticipants,
                ev(key),
                format!("{key} has gate {} but no participants", event.gate),
            );
        }
        let mut seen = BTreeSet::new();
        for p in &event.participants {
            if !(p.importance.is_finite() && (0.0..=1.0).contains(&p.importance)) {
                c.error(
                    IssueCode::ImportanceOutOfRange,
                    ev(key),
                    format!("importance {} of {} is outside [0, 1]", p.importance, p.child_id),
                );
            }
            if !seen.insert(&p.child_id) {
                c.error(
                    IssueCode::DuplicateParticipant,
                    ev(key),
                    format!("{} listed twice", p.child_id),
                );
                continue;
            }
            if !lib.events.contains_key(&p.child_id) {
                c.error(
                    IssueCode::DanglingReference,
                    ev(key),
                    format!("participant {} does not exist", p.child_id),
                );
                continue;
            }
            parents.entry(p.child_id.clone()).or_default().push(key.clone());
            hierarchy_edges.push((key.clone(), p.child_id.clone()));
        }
    }

    let nodes: Vec<EventId> = lib.events.keys().cloned().collect();
    let self_loops: Vec<&EventId> = hierarchy_edges
        .iter()
        .filter(|(a, b)| a == b)
        .map(|(a, _)| a)
        .collect();
    for id in self_loops {
        c.error(
            IssueCode::CycleInHierarchy,
            ev(id),
            format!("{id} lists itself as a participant"),
        );
    }
    for cycle in cycles(&nodes, &hierarchy_edges) {
        c.error(
            IssueCode::CycleInHierarchy,
            ev(&cycle[0]),
            format!("participant cycle through {}", join(&cycle)),
        );
    }
    for (child, ps) in &parents {
        if ps.len() > 1 {
            c.error(
                IssueCode::MultipleParents,
                ev(child),
                format!("{child} has parents {}", join(ps)),
            );
        }
        if let (Some(parent), Some(dotted)) = (ps.first(), child.dotted_parent()) {
            if lib.events.contains_key(&dotted) && &dotted != parent {
                c.warn(
                    IssueCode::IdPrefixMismatch,
                    ev(child),
                    format!("{child} sits under {parent} rather than {dotted}"),
                );
            }
        }
    }

    // sibling groups: children of the same parent, or all roots
    let parent_of = |id: &EventId| parents.get(id).and_then(|ps| ps.first()).cloned();
    let mut sibling_edges: BTreeMap<Option<EventId>, Vec<(EventId, EventId)>> = BTreeMap::new();
    let mut all_edges = Vec::new();
    let mut seen_relations = BTreeSet::new();
    for (i, rel) in lib.relations.iter().enumerate() {
        let mut dangling = false;
        for end in [&rel.subject, &rel.object] {
            if !lib.events.contains_key(end) {
                c.error(
                    IssueCode::DanglingReference,
                    IssueSubject::Relation(i),
                    format!("relation {rel} references missing {end}"),
                );
                dangling = true;
            }
        }
        if dangling {
            continue;
        }
        if rel.subject == rel.object {
            c.error(
                IssueCode::SelfRelation,
                IssueSubject::Relation(i),
                format!("relation {rel} relates an event to itself"),
            );
            continue;
        }
        if !seen_relations.insert((&rel.subject, &rel.object)) {
            c.warn(
                IssueCode::DuplicateRelation,
                IssueSubject::Relation(i),
                format!("relation {rel} repeated"),
            );
        }
        all_edges.push((rel.subject.clone(), rel.object.clone()));
        let (ps, po) = (parent_of(&rel.subject), parent_of(&rel.object));
        if ps == po {
            sibling_edges
                .entry(ps)
                .or_default()
                .push((rel.subject.clone(), rel.object.clone()));
        } else {
            c.warn(
                IssueCode::NonSiblingRelation,
                IssueSubject::Relation(i),
                format!("relation {rel} crosses parents"),
            );
        }
    }

    let mut sibling_cycles = BTreeSet::new();
    for edges in sibling_edges.values() {
        for cycle in cycles(&nodes, edges) {
            c.error(
                IssueCode::TemporalCycle,
                ev(&cycle[0]),
                format!("temporal cycle among siblings {}", join(&cycle)),
            );
            sibling_cycles.extend(cycle);
        }
    }
    for cycle in cycles(&nodes, &all_edges) {
        if !cycle.iter().all(|id| sibling_cycles.contains(id)) {
            c.warn(
                IssueCode::GlobalTemporalCycle,
                ev(&cycle[0]),
                format!("temporal cycle across parents {}", join(&cycle)),
            );
        }
    }

    let order = |a: &Issue, b: &Issue| (a.code, &a.subject, &a.message).cmp(&(b.code, &b.subject, &b.message));
    c.errors.sort_by(order);
    c.warnings.sort_by(order);
    ValidationReport {
        errors: c.errors,
        warnings: c.warnings,
    }
}
