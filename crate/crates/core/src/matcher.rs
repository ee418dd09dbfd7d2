//! Aligning extracted events with schema events.
//!
//! Similarity is `alpha * sem + beta * str`: `sem` is the clamped cosine of
//! text embeddings and `str` the Jaccard overlap of parameter values with
//! the schema event's own name and its participant names.
//!
//! Assignment is greedy over all candidate pairs by descending similarity,
//! so each extracted event takes its best free node and each node keeps
//! the strongest extracted event. Similarities are compared after rounding
//! to 1e-9, which keeps tie-breaks stable when embeddings are rescaled.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, EmbeddingError, EmbeddingProvider, EmbeddingVector};
use crate::ingest::{jaccard, ExtractedEvent};
use crate::schema::{normalize_name, EventId, Gate, SchemaEvent, SchemaLibrary, TemporalRelation};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MatchError {
    #[error("invalid match config: {0}")]
    InvalidConfig(String),
    #[error("unknown id {0}")]
    UnknownId(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextSource {
    Name,
    #[default]
    NamePlusDescription,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatchConfig")]
pub struct MatchConfig {
    alpha: f64,
    beta: f64,
    pub min_sim: f64,
    pub text_source: TextSource,
}

#[derive(Deserialize)]
#[serde(default)]
struct RawMatchConfig {
    alpha: f64,
    beta: f64,
    min_sim: f64,
    text_source: TextSource,
}

impl Default for RawMatchConfig {
    fn default() -> Self {
        let d = MatchConfig::default();
        Self { alpha: d.alpha, beta: d.beta, min_sim: d.min_sim, text_source: d.text_source }
    }
}

impl TryFrom<RawMatchConfig> for MatchConfig {
    type Error = MatchError;

    fn try_from(r: RawMatchConfig) -> Result<Self, Self::Error> {
        MatchConfig::new(r.alpha, r.beta, r.min_sim, r.text_source)
    }
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            beta: 0.3,
            min_sim: 0.35,
            text_source: TextSource::NamePlusDescription,
        }
    }
}

impl MatchConfig {
    pub fn new(alpha: f64, beta: f64, min_sim: f64, text_source: TextSource) -> Result<Self, MatchError> {
        if !(alpha >= 0.0 && beta >= 0.0) || (alpha + beta - 1.0).abs() > 1e-9 {
            return Err(MatchError::InvalidConfig(format!(
                "alpha and beta must be non-negative and sum to 1 (got {alpha} + {beta})"
            )));
        }
        if !(0.0..=1.0).contains(&min_sim) {
            return Err(MatchError::InvalidConfig(format!("min_sim {min_sim} outside [0, 1]")));
        }
        Ok(Self {
            alpha,
            beta,
            min_sim,
            text_source,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub extracted_id: String,
    pub schema_id: EventId,
    pub sim: f64,
    pub sem: f64,
    #[serde(rename = "str")]
    pub string_sim: f64,
}

pub fn schema_text(event: &SchemaEvent, source: TextSource) -> String {
    match source {
        TextSource::Name => event.name.clone(),
        TextSource::NamePlusDescription if event.description.trim().is_empty() => event.name.clone(),
        TextSource::NamePlusDescription => format!("{} {}", event.name, event.description),
    }
}

/// The schema event's own name plus its participants' names.
pub fn schema_parameters(event: &SchemaEvent, lib: &SchemaLibrary) -> BTreeSet<String> {
    let mut out: BTreeSet<String> = event
        .participants
        .iter()
        .filter_map(|p| lib.name_of(&p.child_id))
        .map(normalize_name)
        .collect();
    out.insert(event.normalized_name());
    out
}

pub fn str_sim(ext: &ExtractedEvent, event: &SchemaEvent, lib: &SchemaLibrary) -> f64 {
    jaccard(&ext.parameter_values(), &schema_parameters(event, lib))
}

fn clamp_cos(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    Ok(cosine(a, b)?.max(0.0))
}

pub fn sem_sim(
    ext: &ExtractedEvent,
    event: &SchemaEvent,
    provider: &dyn EmbeddingProvider,
    cfg: &MatchConfig,
) -> Result<f64, MatchError> {
    let a = ext.embedding_with(provider)?;
    let b = provider.embed(&schema_text(event, cfg.text_source))?;
    Ok(clamp_cos(&a, &b)?)
}

pub fn composite(sem: f64, string_sim: f64, cfg: &MatchConfig) -> f64 {
    cfg.alpha * sem + cfg.beta * string_sim
}

pub fn composite_sim(
    ext: &ExtractedEvent,
    event: &SchemaEvent,
    lib: &SchemaLibrary,
    provider: &dyn EmbeddingProvider,
    cfg: &MatchConfig,
) -> Result<f64, MatchError> {
    Ok(composite(sem_sim(ext, event, provider, cfg)?, str_sim(ext, event, lib), cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unmatched {
    pub extracted_id: String,
    pub best_schema_id: Option<EventId>,
    pub best_sim: f64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub matches: Vec<Match>,
    pub unmatched: Vec<Unmatched>,
}

fn sim_key(sim: f64) -> i64 {
    (sim * 1e9).round() as i64
}

pub fn match_events(
    exts: &[ExtractedEvent],
    lib: &SchemaLibrary,
    provider: &dyn EmbeddingProvider,
    cfg: &MatchConfig,
) -> Result<MatchOutcome, MatchError> {
    let nodes: Vec<&SchemaEvent> = lib.events.values().collect();
    let node_texts: Vec<String> = nodes.iter().map(|e| schema_text(e, cfg.text_source)).collect();
    let node_vecs = provider.embed_batch(&node_texts)?;
    let node_params: Vec<BTreeSet<String>> = nodes.iter().map(|e| schema_parameters(e, lib)).collect();

    // (key, ext index, node index, match)
    let mut cands: Vec<(i64, usize, usize, Match)> = Vec::new();
    let mut best: Vec<Option<(i64, usize, f64)>> = vec![None; exts.len()];
    for (i, ext) in exts.iter().enumerate() {
        let v = ext.embedding_with(provider)?;
        let values = ext.parameter_values();
        for (j, node) in nodes.iter().enumerate() {
            let sem = clamp_cos(&v, &node_vecs[j])?;
            let string_sim = jaccard(&values, &node_params[j]);
            let sim = composite(sem, string_sim, cfg);
            let key = sim_key(sim);
            if best[i].is_none_or(|(k, _, _)| key > k) {
                best[i] = Some((key, j, sim));
            }
            if sim >= cfg.min_sim {
                cands.push((
                    key,
                    i,
                    j,
                    Match {
                        extracted_id: ext.id.clone(),
                        schema_id: node.id.clone(),
                        sim,
                        sem,
                        string_sim,
                    },
                ));
            }
        }
    }
    // node order is id order, so the index is the id tie-break
    cands.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut ext_done = vec![false; exts.len()];
    let mut node_done = vec![false; nodes.len()];
    let mut matches = Vec::new();
    for (_, i, j, m) in cands {
        if !ext_done[i] && !node_done[j] {
            ext_done[i] = true;
            node_done[j] = true;
            matches.push(m);
        }
    }
    matches.sort_by(|a, b| a.schema_id.cmp(&b.schema_id));
    let unmatched = exts
        .iter()
        .enumerate()
        .filter(|(i, _)| !ext_done[*i])
        .map(|(i, ext)| {
            let (best_schema_id, best_sim) = match best[i] {
                Some((_, j, s)) => (Some(nodes[j].id.clone()), s),
                None => (None, 0.0),
            };
            let reason = if best_sim < cfg.min_sim {
                "below min_sim for every schema event"
            } else {
                "every candidate node was taken by a stronger match"
            };
            Unmatched {
                extracted_id: ext.id.clone(),
                best_schema_id,
                best_sim,
                reason: reason.into(),
            }
        })
        .collect();
    Ok(MatchOutcome { matches, unmatched })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "extracted_id", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeState {
    Matched(String),
    Unmatched,
}

impl NodeState {
    pub fn is_matched(&self) -> bool {
        matches!(self, NodeState::Matched(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstantiatedGraph {
    pub nodes: BTreeMap<EventId, NodeState>,
    /// Merged parameter set per node: extracted parameters plus schema
    /// participant names for matched nodes, participant names otherwise.
    pub attributes: BTreeMap<EventId, BTreeSet<String>>,
    pub times: BTreeMap<EventId, NaiveDate>,
    pub edges: Vec<TemporalRelation>,
}

impl InstantiatedGraph {
    pub fn matched(&self) -> impl Iterator<Item = (&EventId, &str)> {
        self.nodes.iter().filter_map(|(id, s)| match s {
            NodeState::Matched(x) => Some((id, x.as_str())),
            NodeState::Unmatched => None,
        })
    }

    pub fn is_matched(&self, id: &EventId) -> bool {
        self.nodes.get(id).is_some_and(NodeState::is_matched)
    }

    pub fn matched_count(&self) -> usize {
        self.matched().count()
    }

    /// A graph over `lib` with every node unmatched.
    pub fn unmatched(lib: &SchemaLibrary) -> Self {
        instantiate(&[], lib, &[]).expect("no matches cannot fail")
    }
}

fn participant_names(event: &SchemaEvent, lib: &SchemaLibrary) -> BTreeSet<String> {
    event
        .participants
        .iter()
        .filter_map(|p| lib.name_of(&p.child_id))
        .map(normalize_name)
        .collect()
}

pub fn instantiate(
    matches: &[Match],
    lib: &SchemaLibrary,
    exts: &[ExtractedEvent],
) -> Result<InstantiatedGraph, MatchError> {
    let by_id: HashMap<&str, &ExtractedEvent> = exts.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut nodes: BTreeMap<EventId, NodeState> =
        lib.event_ids().map(|id| (id.clone(), NodeState::Unmatched)).collect();
    let mut attributes: BTreeMap<EventId, BTreeSet<String>> = lib
        .events
        .values()
        .map(|e| (e.id.clone(), participant_names(e, lib)))
        .collect();
    let mut times = BTreeMap::new();
    let mut used = BTreeSet::new();
    for m in matches {
        let ext = by_id
            .get(m.extracted_id.as_str())
            .ok_or_else(|| MatchError::UnknownId(m.extracted_id.clone()))?;
        let slot = nodes
            .get_mut(&m.schema_id)
            .ok_or_else(|| MatchError::UnknownId(m.schema_id.to_string()))?;
        if !used.insert(m.extracted_id.as_str()) {
            return Err(MatchError::UnknownId(format!("{} matched twice", m.extracted_id)));
        }
        *slot = NodeState::Matched(m.extracted_id.clone());
        attributes
            .get_mut(&m.schema_id)
            .expect("every node has attributes")
            .extend(ext.parameters.iter().cloned());
        if let Some(t) = ext.time {
            times.insert(m.schema_id.clone(), t);
        }
    }
    Ok(InstantiatedGraph {
        nodes,
        attributes,
        times,
        edges: lib.relations.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateViolation {
    pub event: EventId,
    pub gate: Gate,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalViolation {
    pub relation: TemporalRelation,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub gate_violations: Vec<GateViolation>,
    pub temporal_violations: Vec<TemporalViolation>,
    pub ok: bool,
}

pub fn consistency_check(g: &InstantiatedGraph, lib: &SchemaLibrary) -> ConsistencyReport {
    let mut gate_violations = Vec::new();
    for ev in lib.events.values() {
        let children = lib.children_of(&ev.id);
        if children.is_empty() {
            continue;
        }
        let matched = children.iter().filter(|c| g.is_matched(c)).count();
        let parent_matched = g.is_matched(&ev.id);
        let detail = match ev.gate {
            Gate::And if parent_matched && matched < children.len() => Some(format!(
                "{} of {} sub-events unmatched under a matched AND event",
                children.len() - matched,
                children.len()
            )),
            Gate::Or if parent_matched && matched == 0 => {
                Some("matched OR event has no matched sub-event".to_string())
            }
            Gate::Xor if matched >= 2 => Some(format!("{matched} sub-events matched under XOR")),
            _ => None,
        };
        if let Some(detail) = detail {
            gate_violations.push(GateViolation {
                event: ev.id.clone(),
                gate: ev.gate,
                detail,
            });
        }
    }
    let mut temporal_violations = Vec::new();
    for rel in &g.edges {
        if !g.is_matched(&rel.object) {
            continue;
        }
        if let (Some(ta), Some(tb)) = (g.times.get(&rel.subject), g.times.get(&rel.object)) {
            if tb < ta {
                temporal_violations.push(TemporalViolation {
                    relation: rel.clone(),
                    detail: format!("{} happens on {tb}, before its precursor {} on {ta}", rel.object, rel.subject),
                });
            }
        }
    }
    let ok = gate_violations.is_empty() && temporal_violations.is_empty();
    ConsistencyReport {
        gate_violations,
        temporal_violations,
        ok,
    }
}

/// Structured text report of a matching run.
pub struct MatchReport<'a> {
    pub outcome: &'a MatchOutcome,
    pub consistency: &'a ConsistencyReport,
}

impl fmt::Display for MatchReport<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "matches: {}", self.outcome.matches.len())?;
        for m in &self.outcome.matches {
            writeln!(
                f,
                "  {} -> {} sim={:.6} sem={:.6} str={:.6}",
                m.extracted_id, m.schema_id, m.sim, m.sem, m.string_sim
            )?;
        }
        writeln!(f, "unmatched: {}", self.outcome.unmatched.len())?;
        for u in &self.outcome.unmatched {
            let best = u.best_schema_id.as_ref().map_or("-".to_string(), ToString::to_string);
            writeln!(f, "  {} best={} sim={:.6} ({})", u.extracted_id, best, u.best_sim, u.reason)?;
        }
        writeln!(f, "consistency: {}", if self.consistency.ok { "ok" } else { "violations" })?;
        for v in &self.consistency.gate_violations {
            writeln!(f, "  gate {} {}: {}", v.event, v.gate, v.detail)?;
        }
        for v in &self.consistency.temporal_violations {
            writeln!(f, "  temporal {}: {}", v.relation, v.detail)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashEmbedder;
    use crate::schema::fixtures::RECYCLING_TEXT;
    use crate::schema::parse_hierarchy_text;

    fn id(s: &str) -> EventId {
        EventId::parse(s).unwrap()
    }

    fn recycling() -> SchemaLibrary {
        parse_hierarchy_text(RECYCLING_TEXT).unwrap().library
    }

    /// An extraction that mirrors a schema node exactly.
    fn mirror(lib: &SchemaLibrary, node: &str, ext_id: &str) -> ExtractedEvent {
        let ev = lib.get(&id(node)).unwrap();
        ExtractedEvent::new(ext_id, "d1", schema_text(ev, TextSource::NamePlusDescription))
            .with_parameters(schema_parameters(ev, lib))
    }

    #[test]
    fn config_validation() {
        assert!(MatchConfig::new(0.5, 0.5, 0.3, TextSource::Name).is_ok());
        assert!(MatchConfig::new(0.7, 0.7, 0.3, TextSource::Name).is_err());
        assert!(MatchConfig::new(1.2, -0.2, 0.3, TextSource::Name).is_err());
        assert!(MatchConfig::new(0.7, 0.3, 1.5, TextSource::Name).is_err());
        let parsed: MatchConfig = serde_json::from_str(r#"{"alpha":0.6,"beta":0.4,"min_sim":0.2}"#).unwrap();
        assert_eq!(parsed.alpha(), 0.6);
        assert!(serde_json::from_str::<MatchConfig>(r#"{"alpha":0.6,"beta":0.6,"min_sim":0.2}"#).is_err());
    }

    #[test]
    fn composite_examples() {
        let cfg = MatchConfig::default();
        assert_eq!(composite(1.0, 1.0, &cfg), 1.0);
        assert_eq!(composite(1.0, 0.0, &cfg), 0.7);
        for (a, b) in [(0.7, 0.3), (0.5, 0.5), (0.0, 1.0)] {
            let c = MatchConfig::new(a, b, 0.3, TextSource::Name).unwrap();
            assert!((composite(0.5, 0.5, &c) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn str_sim_examples() {
        let lib = recycling();
        let leaf = lib.get(&id("ev1.1.2")).unwrap();
        let ext = ExtractedEvent::new("x", "d", "t").with_parameters(["material=Cobalt"]);
        assert_eq!(str_sim(&ext, leaf, &lib), 1.0);
        let ext = ExtractedEvent::new("x", "d", "t").with_parameters(["cobalt", "nickel"]);
        assert_eq!(str_sim(&ext, leaf, &lib), 0.5);
        let ext = ExtractedEvent::new("x", "d", "t");
        assert_eq!(str_sim(&ext, leaf, &lib), 0.0);
    }

    #[test]
    fn identical_text_scores_one() {
        let lib = recycling();
        let p = HashEmbedder::default();
        let cfg = MatchConfig::default();
        for node in ["ev1", "ev1.1", "ev1.1.3"] {
            let ext = mirror(&lib, node, "x");
            let s = composite_sim(&ext, lib.get(&id(node)).unwrap(), &lib, &p, &cfg).unwrap();
            assert!((s - 1.0).abs() <= 1e-12, "{node}: {s}");
        }
        let empty = ExtractedEvent::new("x", "d", "");
        assert_eq!(sem_sim(&empty, lib.get(&id("ev1")).unwrap(), &p, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn one_match_per_node() {
        let lib = recycling();
        let p = HashEmbedder::default();
        let cfg = MatchConfig::default();
        let exact = mirror(&lib, "ev1.1", "a");
        let weaker = mirror(&lib, "ev1.1", "b").with_parameters(["pyrometallurgical"]);
        let out = match_events(&[weaker, exact], &lib, &p, &cfg).unwrap();
        let on_node: Vec<&Match> = out.matches.iter().filter(|m| m.schema_id == id("ev1.1")).collect();
        assert_eq!(on_node.len(), 1);
        assert_eq!(on_node[0].extracted_id, "a");
        // the loser moves to its next-best node or is reported
        let b_matched = out.matches.iter().any(|m| m.extracted_id == "b");
        let b_reported = out.unmatched.iter().any(|u| u.extracted_id == "b");
        assert!(b_matched ^ b_reported);
    }

    #[test]
    fn below_threshold_is_unmatched() {
        let lib = recycling();
        let ext = ExtractedEvent::new("z", "d", "port strike delays container shipping");
        let out = match_events(&[ext], &lib, &HashEmbedder::default(), &MatchConfig::default()).unwrap();
        assert!(out.matches.is_empty());
        assert_eq!(out.unmatched[0].extracted_id, "z");
    }

    #[test]
    fn instantiate_and_check_full_match() {
        let lib = recycling();
        let exts: Vec<ExtractedEvent> = lib
            .event_ids()
            .enumerate()
            .map(|(k, node)| mirror(&lib, node.as_str(), &format!("x{k}")))
            .collect();
        let out = match_events(&exts, &lib, &HashEmbedder::default(), &MatchConfig::default()).unwrap();
        assert_eq!(out.matches.len(), 9);
        let g = instantiate(&out.matches, &lib, &exts).unwrap();
        assert_eq!(g.matched_count(), 9);
        assert_eq!(g.edges, lib.relations);
        // ev1 is OR with all three children matched: consistent
        assert!(consistency_check(&g, &lib).ok);
    }

    #[test]
    fn instantiate_zero_and_one() {
        let lib = recycling();
        let g = InstantiatedGraph::unmatched(&lib);
        assert_eq!(g.nodes.len(), 9);
        assert_eq!(g.matched_count(), 0);
        let ext = ExtractedEvent::new("x", "d", "t").with_parameters(["actor=Umicore"]);
        let m = Match { extracted_id: "x".into(), schema_id: id("ev1.1"), sim: 1.0, sem: 1.0, string_sim: 1.0 };
        let g = instantiate(std::slice::from_ref(&m), &lib, std::slice::from_ref(&ext)).unwrap();
        assert_eq!(g.matched().map(|(i, _)| i.clone()).collect::<Vec<_>>(), vec![id("ev1.1")]);
        assert!(g.attributes[&id("ev1.1")].contains("actor=Umicore"));
        assert!(g.attributes[&id("ev1.1")].contains("cobalt"));
        let bad = Match { schema_id: id("ev9"), ..m };
        assert!(matches!(instantiate(&[bad], &lib, &[ext]), Err(MatchError::UnknownId(_))));
    }

    fn graph_with(lib: &SchemaLibrary, matched: &[&str]) -> InstantiatedGraph {
        let mut g = InstantiatedGraph::unmatched(lib);
        for (k, n) in matched.iter().enumerate() {
            g.nodes.insert(id(n), NodeState::Matched(format!("x{k}")));
        }
        g
    }

    #[test]
    fn gate_violations() {
        let lib = recycling();
        // ev1.1 is AND over five children
        let r = consistency_check(&graph_with(&lib, &["ev1.1", "ev1.1.1"]), &lib);
        assert_eq!(r.gate_violations.len(), 1);
        assert_eq!(r.gate_violations[0].gate, Gate::And);
        // ev1 is OR
        let r = consistency_check(&graph_with(&lib, &["ev1"]), &lib);
        assert_eq!(r.gate_violations.len(), 1);
        assert!(!r.ok);

        let mut xor = lib.clone();
        xor.events.get_mut(&id("ev1")).unwrap().gate = Gate::Xor;
        let r = consistency_check(&graph_with(&xor, &["ev1.2", "ev1.3"]), &xor);
        assert_eq!(r.gate_violations.len(), 1);
        assert_eq!(r.gate_violations[0].event, id("ev1"));
    }

    #[test]
    fn temporal_violation() {
        let lib = recycling();
        let mut g = graph_with(&lib, &["ev1.1", "ev1.3"]);
        g.times.insert(id("ev1.1"), NaiveDate::from_ymd_opt(2023, 3, 10).unwrap());
        g.times.insert(id("ev1.3"), NaiveDate::from_ymd_opt(2023, 3, 1).unwrap());
        let r = consistency_check(&g, &lib);
        assert_eq!(r.temporal_violations.len(), 1);
        assert_eq!(r.temporal_violations[0].relation, TemporalRelation::new(id("ev1.1"), id("ev1.3")));
    }

    #[test]
    fn report_lists_sections() {
        let outcome = MatchOutcome::default();
        let consistency = ConsistencyReport { ok: true, ..Default::default() };
        let text = MatchReport { outcome: &outcome, consistency: &consistency }.to_string();
        assert!(text.contains("matches: 0") && text.contains("consistency: ok"));
    }
}
