//! Documents, extracted events, coreference and impact scoring.
//!
//! Extraction proper happens elsewhere; [`load_extractions`] reads its
//! output. [`baseline_extract`] is a small rule-based extractor driven by a
//! gazetteer, good enough for fixtures and demos.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::NaiveDate;
use petgraph::unionfind::UnionFind;
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, EmbeddingError, EmbeddingProvider, EmbeddingVector};
use crate::schema::normalize_name;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IngestError {
    #[error("malformed record {index}: {reason}")]
    MalformedRecord { index: usize, reason: String },
    #[error("duplicate extracted event id {0}")]
    DuplicateEventId(String),
    #[error("span {start}..{end} of {id} is outside its document")]
    SpanOutOfBounds { id: String, start: usize, end: usize },
    #[error("malformed gazetteer line {line}: {reason}")]
    MalformedGazetteer { line: usize, reason: String },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub published: Option<NaiveDate>,
    pub paragraphs: Vec<String>,
    #[serde(default)]
    pub source: String,
}

impl Document {
    /// Paragraphs joined by newlines; spans index into this text by char.
    pub fn text(&self) -> String {
        self.paragraphs.join("\n")
    }

    pub fn char_len(&self) -> usize {
        self.paragraphs.iter().map(|p| p.chars().count()).sum::<usize>()
            + self.paragraphs.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedEvent {
    pub id: String,
    pub doc_id: String,
    pub trigger_text: String,
    /// Character offsets `[start, end)` into the document text.
    pub span: (usize, usize),
    #[serde(default)]
    pub parameters: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_type: Option<String>,
    /// Filled on demand; when present it is used instead of re-embedding.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingVector>,
}

impl ExtractedEvent {
    pub fn new(id: impl Into<String>, doc_id: impl Into<String>, trigger_text: impl Into<String>) -> Self {
        let trigger_text = trigger_text.into();
        Self {
            id: id.into(),
            doc_id: doc_id.into(),
            span: (0, trigger_text.chars().count()),
            trigger_text,
            parameters: BTreeSet::new(),
            time: None,
            severity: None,
            event_type: None,
            embedding: None,
        }
    }

    pub fn with_parameters<I, S>(mut self, params: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.parameters = params.into_iter().map(Into::into).collect();
        self
    }

    /// Normalized parameter values, with any `role=` prefix stripped.
    pub fn parameter_values(&self) -> BTreeSet<String> {
        self.parameters.iter().map(|p| parameter_value(p)).collect()
    }

    pub fn embedding_with(&self, provider: &dyn EmbeddingProvider) -> Result<EmbeddingVector, EmbeddingError> {
        match &self.embedding {
            Some(v) => Ok(v.clone()),
            None => provider.embed(&self.trigger_text),
        }
    }
}

pub fn parameter_value(p: &str) -> String {
    normalize_name(p.split_once('=').map_or(p, |(_, v)| v))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    doc_id: String,
    trigger_text: String,
    span: [usize; 2],
    #[serde(default)]
    parameters: Vec<String>,
    #[serde(default)]
    time: Option<String>,
    #[serde(default)]
    severity: Option<f64>,
    #[serde(default)]
    event_type: Option<String>,
}

/// Reads a JSON array of extraction records. `docs`, when given, bounds spans.
pub fn load_extractions(content: &str, docs: Option<&[Document]>) -> Result<Vec<ExtractedEvent>, IngestError> {
    if content.trim().is_empty() {
        return Ok(Vec::new());
    }
    let raw: Vec<serde_json::Value> = serde_json::from_str(content).map_err(|e| IngestError::MalformedRecord {
        index: 0,
        reason: e.to_string(),
    })?;
    let lengths: Option<HashMap<&str, usize>> =
        docs.map(|ds| ds.iter().map(|d| (d.id.as_str(), d.char_len())).collect());
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(raw.len());
    for (index, value) in raw.into_iter().enumerate() {
        let bad = |reason: String| IngestError::MalformedRecord { index, reason };
        let r: Record = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
        if let Some(s) = r.severity {
            if !(0.0..=1.0).contains(&s) {
                return Err(bad(format!("severity {s} outside [0, 1]")));
            }
        }
        let time = r
            .time
            .as_deref()
            .map(|t| NaiveDate::parse_from_str(t, "%Y-%m-%d"))
            .transpose()
            .map_err(|e| bad(format!("time: {e}")))?;
        let [start, end] = r.span;
        let in_doc = match &lengths {
            Some(l) => l.get(r.doc_id.as_str()).is_some_and(|len| end <= *len),
            None => true,
        };
        if start > end || !in_doc {
            return Err(IngestError::SpanOutOfBounds { id: r.id, start, end });
        }
        if !seen.insert(r.id.clone()) {
            return Err(IngestError::DuplicateEventId(r.id));
        }
        out.push(ExtractedEvent {
            id: r.id,
            doc_id: r.doc_id,
            trigger_text: r.trigger_text,
            span: (start, end),
            parameters: r.parameters.into_iter().collect(),
            time,
            severity: r.severity,
            event_type: r.event_type,
            embedding: None,
        });
    }
    Ok(out)
}

pub fn save_extractions(events: &[ExtractedEvent]) -> String {
    let records: Vec<serde_json::Value> = events
        .iter()
        .map(|e| {
            let mut v = serde_json::json!({
                "id": e.id,
                "doc_id": e.doc_id,
                "trigger_text": e.trigger_text,
                "span": [e.span.0, e.span.1],
                "parameters": e.parameters,
            });
            if let Some(t) = e.time {
                v["time"] = t.format("%Y-%m-%d").to_string().into();
            }
            if let Some(s) = e.severity {
                v["severity"] = s.into();
            }
            if let Some(t) = &e.event_type {
                v["event_type"] = t.clone().into();
            }
            v
        })
        .collect();
    serde_json::to_string_pretty(&records).expect("records serialize")
}

#[derive(Debug, Clone)]
struct RolePattern {
    role: String,
    regex: Regex,
}

#[derive(Debug, Clone)]
struct GazetteerEntry {
    trigger: Regex,
    event_type: String,
    roles: Vec<RolePattern>,
}

/// Trigger phrases with event types and role patterns, one per line:
/// `trigger<TAB>event_type<TAB>role:alt1|alt2;role:alt3`.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    entries: Vec<GazetteerEntry>,
}

fn whole_words(alternatives: &[&str]) -> Result<Regex, regex::Error> {
    let alts: Vec<String> = alternatives.iter().map(|a| regex::escape(a.trim())).collect();
    RegexBuilder::new(&format!(r"\b(?:{})\b", alts.join("|")))
        .case_insensitive(true)
        .build()
}

impl Gazetteer {
    pub fn parse(content: &str) -> Result<Self, IngestError> {
        let mut entries = Vec::new();
        for (i, line) in content.lines().enumerate() {
            let line_no = i + 1;
            let bad = |reason: String| IngestError::MalformedGazetteer { line: line_no, reason };
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 2 || fields[0].trim().is_empty() {
                return Err(bad("expected trigger<TAB>event_type[<TAB>roles]".into()));
            }
            let trigger = whole_words(&[fields[0]]).map_err(|e| bad(e.to_string()))?;
            let mut roles = Vec::new();
            for spec in fields.get(2).copied().unwrap_or("").split(';').filter(|s| !s.trim().is_empty()) {
                let (role, pattern) = spec.split_once(':').ok_or_else(|| bad(format!("role pattern {spec:?} lacks ':'")))?;
                let alts: Vec<&str> = pattern.split('|').filter(|a| !a.trim().is_empty()).collect();
                if alts.is_empty() {
                    return Err(bad(format!("role {role:?} has no alternatives")));
                }
                roles.push(RolePattern {
                    role: role.trim().to_string(),
                    regex: whole_words(&alts).map_err(|e| bad(e.to_string()))?,
                });
            }
            entries.push(GazetteerEntry {
                trigger,
                event_type: fields[1].trim().to_string(),
                roles,
            });
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Sentences as char ranges of the document text. Paragraph breaks always
/// end a sentence.
fn sentences(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let push = |s: usize, e: usize, out: &mut Vec<(usize, usize)>| {
        let (mut s, mut e) = (s, e);
        while s < e && chars[s].is_whitespace() {
            s += 1;
        }
        while e > s && chars[e - 1].is_whitespace() {
            e -= 1;
        }
        if s < e {
            out.push((s, e));
        }
    };
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let end_mark = matches!(c, '.' | '!' | '?') && chars.get(i + 1).is_none_or(|n| n.is_whitespace());
        if c == '\n' {
            push(start, i, &mut out);
            start = i + 1;
        } else if end_mark {
            push(start, i + 1, &mut out);
            start = i + 1;
        }
        i += 1;
    }
    push(start, chars.len(), &mut out);
    out
}

fn char_slice(chars: &[char], (s, e): (usize, usize)) -> String {
    chars[s..e].iter().collect()
}

static DATE_PATTERN: std::sync::LazyLock<Regex> =
    std::sync::LazyLock::new(|| Regex::new(r"\b(\d{4}-\d{2}-\d{2})\b").expect("valid regex"));

/// One event per trigger hit. Parameters come from role patterns found in
/// the hit's sentence and its neighbours.
pub fn baseline_extract(doc: &Document, gazetteer: &Gazetteer) -> Vec<ExtractedEvent> {
    let text = doc.text();
    let chars: Vec<char> = text.chars().collect();
    let spans = sentences(&text);
    let sentence_texts: Vec<String> = spans.iter().map(|s| char_slice(&chars, *s)).collect();
    let mut out = Vec::new();
    for (si, sentence) in sentence_texts.iter().enumerate() {
        for entry in &gazetteer.entries {
            for _hit in entry.trigger.find_iter(sentence) {
                let lo = si.saturating_sub(1);
                let hi = (si + 1).min(spans.len() - 1);
                let mut parameters = BTreeSet::new();
                for window in &sentence_texts[lo..=hi] {
                    for role in &entry.roles {
                        for m in role.regex.find_iter(window) {
                            parameters.insert(format!("{}={}", role.role, m.as_str()));
                        }
                    }
                }
                let time = DATE_PATTERN
                    .captures(sentence)
                    .and_then(|c| NaiveDate::parse_from_str(&c[1], "%Y-%m-%d").ok());
                out.push(ExtractedEvent {
                    id: format!("{}-e{}", doc.id, out.len() + 1),
                    doc_id: doc.id.clone(),
                    trigger_text: sentence.clone(),
                    span: spans[si],
                    parameters,
                    time,
                    severity: None,
                    event_type: Some(entry.event_type.clone()),
                    embedding: None,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorefConfig {
    pub param_tau: f64,
    pub embed_tau: f64,
}

impl Default for CorefConfig {
    fn default() -> Self {
        Self {
            param_tau: 0.5,
            embed_tau: 0.85,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorefLink {
    pub a: String,
    pub b: String,
    pub param_score: f64,
    pub embed_score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorefClusters {
    /// Each cluster lists ids in input order; clusters are ordered by their
    /// first member.
    pub clusters: Vec<Vec<String>>,
    pub links: Vec<CorefLink>,
}

impl CorefClusters {
    pub fn cluster_of(&self, id: &str) -> Option<&[String]> {
        self.clusters
            .iter()
            .find(|c| c.iter().any(|x| x == id))
            .map(Vec::as_slice)
    }

    pub fn singletons(ids: impl IntoIterator<Item = String>) -> Self {
        Self {
            clusters: ids.into_iter().map(|i| vec![i]).collect(),
            links: Vec::new(),
        }
    }
}

pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Event key for parameter coreference: its type (or normalized trigger)
/// plus normalized parameter values.
fn coref_key(e: &ExtractedEvent) -> BTreeSet<String> {
    let mut key = e.parameter_values();
    key.insert(match &e.event_type {
        Some(t) => format!("type:{}", normalize_name(t)),
        None => format!("trigger:{}", normalize_name(&e.trigger_text)),
    });
    key
}

pub fn coref_link(
    events: &[ExtractedEvent],
    provider: Option<&dyn EmbeddingProvider>,
    cfg: &CorefConfig,
) -> Result<CorefClusters, IngestError> {
    let keys: Vec<BTreeSet<String>> = events.iter().map(coref_key).collect();
    let vectors: Option<Vec<EmbeddingVector>> = provider
        .map(|p| events.iter().map(|e| e.embedding_with(p)).collect::<Result<_, _>>())
        .transpose()?;
    let mut uf = UnionFind::<usize>::new(events.len());
    let mut links = Vec::new();
    for i in 0..events.len() {
        for j in i + 1..events.len() {
            let param_score = jaccard(&keys[i], &keys[j]);
            let embed_score = match &vectors {
                Some(v) => cosine(&v[i], &v[j])?,
                None => 0.0,
            };
            if param_score >= cfg.param_tau || embed_score >= cfg.embed_tau {
                uf.union(i, j);
                links.push(CorefLink {
                    a: events[i].id.clone(),
                    b: events[j].id.clone(),
                    param_score,
                    embed_score,
                });
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    let mut first: HashMap<usize, usize> = HashMap::new();
    for (i, e) in events.iter().enumerate() {
        let root = uf.find(i);
        let f = *first.entry(root).or_insert(i);
        groups.entry(f).or_default().push(e.id.clone());
    }
    Ok(CorefClusters {
        clusters: groups.into_values().collect(),
        links,
    })
}

/// Pairs of events from the same document whose spans overlap.
pub fn comention_edges(events: &[ExtractedEvent]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for (i, a) in events.iter().enumerate() {
        for b in &events[i + 1..] {
            if a.doc_id == b.doc_id && a.span.0 < b.span.1 && b.span.0 < a.span.1 {
                out.push((a.id.clone(), b.id.clone()));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centrality {
    #[default]
    Degree,
    Eigenvector,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ImpactConfig {
    pub centrality: Centrality,
    /// Adds `ln(cluster size)` to the magnitude, capped at 1.
    pub frequency_bonus: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactScore {
    pub centrality: f64,
    pub magnitude: f64,
    pub total: f64,
}

fn eigenvector_centrality(adj: &[BTreeSet<usize>]) -> Vec<f64> {
    let n = adj.len();
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    for _ in 0..200 {
        // shifted iteration converges on bipartite graphs too
        let mut next: Vec<f64> = (0..n).map(|i| x[i] + adj[i].iter().map(|j| x[*j]).sum::<f64>()).collect();
        let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return vec![0.0; n];
        }
        next.iter_mut().for_each(|v| *v /= norm);
        let delta: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        x = next;
        if delta < 1e-12 {
            break;
        }
    }
    x
}

pub fn impact_score(
    events: &[ExtractedEvent],
    links: &[(String, String)],
    clusters: Option<&CorefClusters>,
    cfg: &ImpactConfig,
) -> BTreeMap<String, ImpactScore> {
    let n = events.len();
    let index: HashMap<&str, usize> = events.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect();
    let mut adj = vec![BTreeSet::new(); n];
    for (a, b) in links {
        if let (Some(&i), Some(&j)) = (index.get(a.as_str()), index.get(b.as_str())) {
            if i != j {
                adj[i].insert(j);
                adj[j].insert(i);
            }
        }
    }
    let centrality: Vec<f64> = match cfg.centrality {
        _ if n <= 1 => vec![0.0; n],
        Centrality::Degree => adj.iter().map(|s| s.len() as f64 / (n - 1) as f64).collect(),
        Centrality::Eigenvector => eigenvector_centrality(&adj),
    };
    events
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut magnitude = e.severity.unwrap_or(0.5);
            if cfg.frequency_bonus {
                let size = clusters.and_then(|c| c.cluster_of(&e.id)).map_or(1, <[String]>::len);
                magnitude = (magnitude + (size as f64).ln()).min(1.0);
            }
            let c = centrality[i];
            (
                e.id.clone(),
                ImpactScore {
                    centrality: c,
                    magnitude,
                    total: c + magnitude,
                },
            )
        })
        .collect()
}
