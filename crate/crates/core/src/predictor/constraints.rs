//! Logical refinement of raw scores.
//!
//! Nodes scoring at or above the threshold start out predicted. Three
//! monotone rules then run as in-place sweeps over the nodes in id order
//! until nothing changes:
//!
//! 1. a predicted or matched child forces its parent,
//! 2. a predicted child of an AND event forces its siblings,
//! 3. a predicted or matched `b` forces every `a` with `a > b`.
//!
//! Finally XOR exclusion runs once per XOR event in id order. The highest
//! scoring predicted child survives (lowest id on ties) unless a child is
//! matched, in which case no predicted child survives. A suppressed child
//! is removed together with every predicted node that forces it, so the
//! result stays closed under rules 1 to 3. Nodes forced by matched nodes
//! are never suppressed.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::matcher::InstantiatedGraph;
use crate::schema::{EventId, Gate, SchemaLibrary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RuleKind {
    ChildToParent,
    AndSiblings,
    PrecursorClosure,
    XorExclusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    pub child_to_parent: bool,
    pub and_siblings: bool,
    pub precursor_closure: bool,
    pub xor_exclusion: bool,
}

impl Default for RuleSet {
    fn default() -> Self {
        Self::all()
    }
}

impl RuleSet {
    pub fn all() -> Self {
        Self {
            child_to_parent: true,
            and_siblings: true,
            precursor_closure: true,
            xor_exclusion: true,
        }
    }

    pub fn none() -> Self {
        Self {
            child_to_parent: false,
            and_siblings: false,
            precursor_closure: false,
            xor_exclusion: false,
        }
    }

    pub fn enabled(&self, kind: RuleKind) -> bool {
        match kind {
            RuleKind::ChildToParent => self.child_to_parent,
            RuleKind::AndSiblings => self.and_siblings,
            RuleKind::PrecursorClosure => self.precursor_closure,
            RuleKind::XorExclusion => self.xor_exclusion,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RefinedState {
    Matched,
    Predicted,
    NotPredicted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinedNode {
    pub state: RefinedState,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub rule: RuleKind,
    pub node: EventId,
    /// The node whose state triggered the rule.
    pub cause: EventId,
    /// Sweep number; XOR suppression is logged one past the last sweep.
    pub iteration: usize,
    /// True when the rule added the node, false when it removed it.
    pub added: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub nodes: BTreeMap<EventId, RefinedNode>,
    pub audit: Vec<AuditEntry>,
    /// Sweeps that added at least one node.
    pub sweeps: usize,
}

impl Refinement {
    pub fn predicted(&self) -> BTreeSet<EventId> {
        self.with_state(RefinedState::Predicted)
    }

    pub fn matched(&self) -> BTreeSet<EventId> {
        self.with_state(RefinedState::Matched)
    }

    fn with_state(&self, state: RefinedState) -> BTreeSet<EventId> {
        self.nodes
            .iter()
            .filter(|(_, n)| n.state == state)
            .map(|(id, _)| id.clone())
            .collect()
    }
}

/// Structural lookups shared by the rules.
struct Structure<'a> {
    lib: &'a SchemaLibrary,
    parent: BTreeMap<EventId, EventId>,
    /// `b -> [a]` for each relation `a > b`.
    precursors: BTreeMap<EventId, Vec<EventId>>,
}

impl<'a> Structure<'a> {
    fn new(lib: &'a SchemaLibrary) -> Self {
        let mut precursors: BTreeMap<EventId, Vec<EventId>> = BTreeMap::new();
        for r in &lib.relations {
            precursors.entry(r.object.clone()).or_default().push(r.subject.clone());
        }
        Self {
            lib,
            parent: lib.parent_map(),
            precursors,
        }
    }

    fn and_siblings(&self, id: &EventId) -> Vec<EventId> {
        match self.parent.get(id) {
            Some(p) if self.lib.get(p).is_some_and(|e| e.gate == Gate::And) => self
                .lib
                .children_of(p)
                .into_iter()
                .filter(|c| *c != id)
                .cloned()
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Nodes forced by `id`, with the rule responsible. AND siblings are
    /// only forced by predicted nodes.
    fn forces(&self, id: &EventId, predicted: bool, rules: &RuleSet) -> Vec<(RuleKind, EventId)> {
        let mut out = Vec::new();
        if rules.child_to_parent {
            if let Some(p) = self.parent.get(id) {
                out.push((RuleKind::ChildToParent, p.clone()));
            }
        }
        if rules.and_siblings && predicted {
            out.extend(self.and_siblings(id).into_iter().map(|s| (RuleKind::AndSiblings, s)));
        }
        if rules.precursor_closure {
            if let Some(ps) = self.precursors.get(id) {
                out.extend(ps.iter().map(|a| (RuleKind::PrecursorClosure, a.clone())));
            }
        }
        out
    }
}

/// Everything entailed by the matched nodes alone.
fn entailed_by_matched(s: &Structure, matched: &BTreeSet<EventId>, rules: &RuleSet) -> BTreeSet<EventId> {
    let mut seen: BTreeSet<EventId> = BTreeSet::new();
    let mut queue: VecDeque<(EventId, bool)> = matched.iter().map(|m| (m.clone(), false)).collect();
    while let Some((id, predicted)) = queue.pop_front() {
        for (_, t) in s.forces(&id, predicted, rules) {
            if !matched.contains(&t) && seen.insert(t.clone()) {
                queue.push_back((t, true));
            }
        }
    }
    seen
}

/// Predicted nodes with a forcing path to `target` (including `target`).
fn forcers_of(s: &Structure, target: &EventId, predicted: &BTreeSet<EventId>, rules: &RuleSet) -> BTreeSet<EventId> {
    let mut out = BTreeSet::from([target.clone()]);
    let mut queue = VecDeque::from([target.clone()]);
    while let Some(v) = queue.pop_front() {
        for u in predicted {
            if !out.contains(u) && s.forces(u, true, rules).iter().any(|(_, t)| *t == v) {
                out.insert(u.clone());
                queue.push_back(u.clone());
            }
        }
    }
    out
}

fn score_of(scores: &BTreeMap<EventId, f64>, id: &EventId) -> f64 {
    scores.get(id).copied().unwrap_or(0.0)
}

/// Refines raw scores `scores` into states. Matched nodes come from `g`.
pub fn apply_constraints(
    g: &InstantiatedGraph,
    scores: &BTreeMap<EventId, f64>,
    lib: &SchemaLibrary,
    rules: &RuleSet,
    threshold: f64,
) -> Refinement {
    let initial: BTreeSet<EventId> = lib
        .event_ids()
        .filter(|id| !g.is_matched(id) && score_of(scores, id) >= threshold)
        .cloned()
        .collect();
    refine_from(g, scores, lib, rules, initial)
}

/// Same as [`apply_constraints`] starting from an explicit predicted set,
/// for example the predicted set of an earlier refinement.
pub fn refine_from(
    g: &InstantiatedGraph,
    scores: &BTreeMap<EventId, f64>,
    lib: &SchemaLibrary,
    rules: &RuleSet,
    initial: BTreeSet<EventId>,
) -> Refinement {
    let s = Structure::new(lib);
    let matched: BTreeSet<EventId> = lib.event_ids().filter(|id| g.is_matched(id)).cloned().collect();
    let mut predicted: BTreeSet<EventId> = initial.into_iter().filter(|id| !matched.contains(id)).collect();
    let mut audit = Vec::new();

    let mut sweeps = 0;
    loop {
        let iteration = sweeps + 1;
        let mut changed = false;
        for id in lib.event_ids() {
            let is_pred = predicted.contains(id);
            if !is_pred && !matched.contains(id) {
                continue;
            }
            for (rule, target) in s.forces(id, is_pred, rules) {
                if !matched.contains(&target) && predicted.insert(target.clone()) {
                    changed = true;
                    audit.push(AuditEntry {
                        rule,
                        node: target,
                        cause: id.clone(),
                        iteration,
                        added: true,
                    });
                }
            }
        }
        if !changed {
            break;
        }
        sweeps += 1;
    }

    if rules.xor_exclusion {
        let locked = entailed_by_matched(&s, &matched, rules);
        for ev in lib.events.values().filter(|e| e.gate == Gate::Xor) {
            let children = lib.children_of(&ev.id);
            let kids: Vec<&EventId> = children.iter().copied().filter(|c| predicted.contains(*c)).collect();
            let any_matched = children.iter().any(|c| matched.contains(*c));
            let pinned: Vec<&EventId> = kids.iter().copied().filter(|c| locked.contains(*c)).collect();
            let keep: BTreeSet<&EventId> = if any_matched || !pinned.is_empty() {
                pinned.into_iter().collect()
            } else {
                kids.iter()
                    .copied()
                    .max_by(|a, b| score_of(scores, a).total_cmp(&score_of(scores, b)).then(b.cmp(a)))
                    .into_iter()
                    .collect()
            };
            let cause = keep
                .iter()
                .next()
                .map_or_else(|| ev.id.clone(), |k| (*k).clone());
            for loser in kids.iter().filter(|k| !keep.contains(*k)) {
                if !predicted.contains(*loser) {
                    continue;
                }
                for gone in forcers_of(&s, loser, &predicted, rules) {
                    if locked.contains(&gone) {
                        continue;
                    }
                    predicted.remove(&gone);
                    audit.push(AuditEntry {
                        rule: RuleKind::XorExclusion,
                        node: gone,
                        cause: cause.clone(),
                        iteration: sweeps + 1,
                        added: false,
                    });
                }
            }
        }
    }

    let nodes = lib
        .event_ids()
        .map(|id| {
            let state = if matched.contains(id) {
                RefinedState::Matched
            } else if predicted.contains(id) {
                RefinedState::Predicted
            } else {
                RefinedState::NotPredicted
            };
            (
                id.clone(),
                RefinedNode {
                    state,
                    score: score_of(scores, id),
                },
            )
        })
        .collect();
    Refinement { nodes, audit, sweeps }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleViolation {
    pub rule: RuleKind,
    pub node: EventId,
    pub detail: String,
}

/// Lists every enabled rule a refinement breaks.
pub fn check_rules(r: &Refinement, lib: &SchemaLibrary, rules: &RuleSet) -> Vec<RuleViolation> {
    let s = Structure::new(lib);
    let matched = r.matched();
    let predicted = r.predicted();
    let active = |id: &EventId| matched.contains(id) || predicted.contains(id);
    let mut out = Vec::new();
    for id in lib.event_ids().filter(|id| active(id)) {
        for (rule, target) in s.forces(id, predicted.contains(id), rules) {
            if !active(&target) {
                out.push(RuleViolation {
                    rule,
                    node: target.clone(),
                    detail: format!("forced by {id} but not predicted"),
                });
            }
        }
    }
    if rules.xor_exclusion {
        let locked = entailed_by_matched(&s, &matched, rules);
        for ev in lib.events.values().filter(|e| e.gate == Gate::Xor) {
            let children = lib.children_of(&ev.id);
            let on: Vec<&EventId> = children.iter().copied().filter(|c| active(c)).collect();
            let free = on.iter().filter(|c| predicted.contains(**c) && !locked.contains(**c)).count();
            if on.len() >= 2 && free > 0 {
                out.push(RuleViolation {
                    rule: RuleKind::XorExclusion,
                    node: ev.id.clone(),
                    detail: format!("{} children active under XOR", on.len()),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::NodeState;
    use crate::schema::{parse_hierarchy_text, Participant, SchemaEvent, TemporalRelation};

    fn id(s: &str) -> EventId {
        EventId::parse(s).unwrap()
    }

    fn scores(pairs: &[(&str, f64)]) -> BTreeMap<EventId, f64> {
        pairs.iter().map(|(k, v)| (id(k), *v)).collect()
    }

    fn lib_from(text: &str) -> SchemaLibrary {
        parse_hierarchy_text(text).unwrap().library
    }

    #[test]
    fn leaf_forces_ancestors() {
        let lib = lib_from(
            "Event 1\nevent: a\nevent_id: ev1\nparticipants: b ev1.1_P1\nGate: or\n\
             Sub-event 1.1\nevent: b\nevent_id: ev1.1\nparticipants: c ev1.1.1_P1\nGate: or\n\
             Sub-event 1.1.1\nevent: c\nevent_id: ev1.1.1\nparticipants: d ev1.1.1.1_P1\nGate: or\n",
        );
        let g = InstantiatedGraph::unmatched(&lib);
        let r = apply_constraints(&g, &scores(&[("ev1.1.1.1", 0.9)]), &lib, &RuleSet::all(), 0.5);
        assert_eq!(r.predicted().len(), 4);
        assert!(r.audit.iter().all(|a| a.rule == RuleKind::ChildToParent));
        assert!(check_rules(&r, &lib, &RuleSet::all()).is_empty());
    }

    #[test]
    fn and_siblings_follow() {
        let lib = lib_from("Event 1\nevent: a\nevent_id: ev1\nparticipants: b ev1.1_P1, c ev1.2_P1, d ev1.3_P1\nGate: and\n");
        let g = InstantiatedGraph::unmatched(&lib);
        let r = apply_constraints(&g, &scores(&[("ev1.2", 0.8)]), &lib, &RuleSet::all(), 0.5);
        assert_eq!(r.predicted(), [id("ev1"), id("ev1.1"), id("ev1.2"), id("ev1.3")].into());
    }

    #[test]
    fn xor_keeps_the_best_child() {
        let lib = lib_from("Event 1\nevent: a\nevent_id: ev1\nparticipants: b ev1.1_P1, c ev1.2_P1\nGate: xor\n");
        let g = InstantiatedGraph::unmatched(&lib);
        let sc = scores(&[("ev1.1", 0.7), ("ev1.2", 0.9)]);
        let r = apply_constraints(&g, &sc, &lib, &RuleSet::all(), 0.5);
        assert_eq!(r.predicted(), [id("ev1"), id("ev1.2")].into());
        assert_eq!(r.nodes[&id("ev1.1")].state, RefinedState::NotPredicted);
        assert_eq!(r.nodes[&id("ev1.1")].score, 0.7);
        // ties go to the lower id
        let tie = apply_constraints(&g, &scores(&[("ev1.1", 0.8), ("ev1.2", 0.8)]), &lib, &RuleSet::all(), 0.5);
        assert!(tie.predicted().contains(&id("ev1.1")));
        assert!(!tie.predicted().contains(&id("ev1.2")));
    }

    #[test]
    fn xor_with_a_matched_child_drops_predicted_siblings() {
        let lib = lib_from("Event 1\nevent: a\nevent_id: ev1\nparticipants: b ev1.1_P1, c ev1.2_P1\nGate: xor\n");
        let mut g = InstantiatedGraph::unmatched(&lib);
        g.nodes.insert(id("ev1.1"), NodeState::Matched("x".into()));
        let r = apply_constraints(&g, &scores(&[("ev1.2", 0.99)]), &lib, &RuleSet::all(), 0.5);
        assert_eq!(r.predicted(), [id("ev1")].into());
        assert_eq!(r.matched(), [id("ev1.1")].into());
    }

    #[test]
    fn suppression_takes_forcers_along() {
        // ev1 XOR over ev1.1 and ev1.2; ev1.2 has a predicted child
        let mut lib = SchemaLibrary::new();
        let mut root = SchemaEvent::new(id("ev1"), "root");
        root.gate = Gate::Xor;
        root.participants = vec![
            Participant { child_id: id("ev1.1"), importance: 1.0 },
            Participant { child_id: id("ev1.2"), importance: 1.0 },
        ];
        let mut b = SchemaEvent::new(id("ev1.2"), "b");
        b.gate = Gate::Or;
        b.participants = vec![Participant { child_id: id("ev1.2.1"), importance: 1.0 }];
        lib.insert(root);
        lib.insert(SchemaEvent::new(id("ev1.1"), "a"));
        lib.insert(b);
        lib.insert(SchemaEvent::new(id("ev1.2.1"), "c"));
        let g = InstantiatedGraph::unmatched(&lib);
        let sc = scores(&[("ev1.1", 0.9), ("ev1.2.1", 0.6)]);
        let r = apply_constraints(&g, &sc, &lib, &RuleSet::all(), 0.5);
        assert_eq!(r.predicted(), [id("ev1"), id("ev1.1")].into());
        assert!(check_rules(&r, &lib, &RuleSet::all()).is_empty());
        let again = refine_from(&g, &sc, &lib, &RuleSet::all(), r.predicted());
        assert_eq!(again.nodes, r.nodes);
    }

    #[test]
    fn precursors_are_pulled_in() {
        let mut lib = lib_from("Event 1\nevent: a\nevent_id: ev1\nparticipants: b ev1.1_P1, c ev1.2_P1\nGate: or\n");
        lib.relations.push(TemporalRelation::new(id("ev1.1"), id("ev1.2")));
        let mut g = InstantiatedGraph::unmatched(&lib);
        g.nodes.insert(id("ev1.2"), NodeState::Matched("x".into()));
        let r = apply_constraints(&g, &BTreeMap::new(), &lib, &RuleSet::all(), 0.5);
        assert_eq!(r.predicted(), [id("ev1"), id("ev1.1")].into());
        let disabled = RuleSet { precursor_closure: false, ..RuleSet::all() };
        let r = apply_constraints(&g, &BTreeMap::new(), &lib, &disabled, 0.5);
        assert_eq!(r.predicted(), [id("ev1")].into());
    }

    #[test]
    fn no_rules_is_thresholding() {
        let lib = lib_from("Event 1\nevent: a\nevent_id: ev1\nparticipants: b ev1.1_P1, c ev1.2_P1\nGate: xor\n");
        let g = InstantiatedGraph::unmatched(&lib);
        let r = apply_constraints(&g, &scores(&[("ev1.1", 0.7), ("ev1.2", 0.9)]), &lib, &RuleSet::none(), 0.5);
        assert_eq!(r.predicted(), [id("ev1.1"), id("ev1.2")].into());
        assert!(r.audit.is_empty());
        assert_eq!(r.sweeps, 0);
    }
}
