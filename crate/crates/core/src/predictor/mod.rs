//! Predicting schema events that happened but were not observed.
//!
//! A GCN scores every node of an instantiated schema, the scores are
//! refined by logical constraints, and predicted nodes borrow arguments
//! from coreferent extractions attached to their matched neighbours.

pub mod constraints;
pub mod dataset;
pub mod features;
pub mod gcn;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use constraints::{
    apply_constraints, check_rules, refine_from, AuditEntry, RefinedNode, RefinedState, Refinement, RuleKind,
    RuleSet, RuleViolation,
};
pub use dataset::{generate_training_set, sample_occurred, DatasetConfig, TrainingSample};
pub use features::{adjacency, build_features, feature_width, features_with, node_embeddings};
pub use gcn::{
    gradients, load_checkpoint, logistic, loss, save_checkpoint, train, Activation, AdjacencyMode, GcnModel,
    GraphSample, Gradients, LossKind, TrainConfig,
};

use crate::embedding::{EmbeddingError, EmbeddingProvider};
use crate::ingest::{CorefClusters, ExtractedEvent};
use crate::matcher::{InstantiatedGraph, NodeState};
use crate::schema::{EventId, SchemaLibrary};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PredictError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no supervised nodes in batch")]
    EmptyBatch,
    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub raw_scores: BTreeMap<EventId, f64>,
    pub refined: BTreeMap<EventId, RefinedNode>,
    pub applied_rules: Vec<AuditEntry>,
    pub coref_arguments: BTreeMap<EventId, BTreeSet<String>>,
    pub sweeps: usize,
}

impl PredictionResult {
    pub fn predicted(&self) -> BTreeSet<EventId> {
        self.refined
            .iter()
            .filter(|(_, n)| n.state == RefinedState::Predicted)
            .map(|(id, _)| id.clone())
            .collect()
    }
}

impl fmt::Display for PredictionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "nodes:")?;
        for (id, node) in &self.refined {
            let state = match node.state {
                RefinedState::Matched => "MATCHED",
                RefinedState::Predicted => "PREDICTED",
                RefinedState::NotPredicted => "NOT_PREDICTED",
            };
            writeln!(f, "  {id} y={:.6} {state}", node.score)?;
            if let Some(args) = self.coref_arguments.get(id).filter(|a| !a.is_empty()) {
                let args: Vec<&str> = args.iter().map(String::as_str).collect();
                writeln!(f, "    arguments: {}", args.join(", "))?;
            }
        }
        writeln!(f, "audit: {} entries over {} sweeps", self.applied_rules.len(), self.sweeps)?;
        for a in &self.applied_rules {
            let verb = if a.added { "added" } else { "removed" };
            writeln!(f, "  [{}] {:?} {verb} {} (cause {})", a.iteration, a.rule, a.node, a.cause)?;
        }
        Ok(())
    }
}

/// Builds one training sample per instantiation from precomputed node
/// embeddings.
pub fn to_graph_samples(
    lib: &SchemaLibrary,
    samples: &[TrainingSample],
    embeddings: &Array2<f64>,
) -> Vec<GraphSample> {
    let a = adjacency(lib);
    samples
        .iter()
        .map(|s| {
            let ids: Vec<&EventId> = lib.event_ids().collect();
            GraphSample {
                adjacency: a.clone(),
                features: features_with(&s.graph, lib, embeddings),
                labels: ids.iter().map(|id| s.labels.get(*id).copied().unwrap_or(0.0)).collect(),
                mask: ids.iter().map(|id| s.labels.contains_key(*id)).collect(),
            }
        })
        .collect()
}

/// Raw per-node scores for an instantiated graph.
pub fn score_nodes(
    model: &GcnModel,
    g: &InstantiatedGraph,
    lib: &SchemaLibrary,
    embeddings: &Array2<f64>,
) -> Result<BTreeMap<EventId, f64>, PredictError> {
    let x = features_with(g, lib, embeddings);
    let y = model.forward(&adjacency(lib), &x)?;
    Ok(lib.event_ids().cloned().zip(y.iter().copied()).collect())
}

pub fn predict(
    model: &GcnModel,
    g: &InstantiatedGraph,
    lib: &SchemaLibrary,
    provider: &dyn EmbeddingProvider,
    rules: &RuleSet,
    threshold: f64,
) -> Result<PredictionResult, PredictError> {
    let emb = node_embeddings(lib, provider)?;
    let raw_scores = score_nodes(model, g, lib, &emb)?;
    let r = apply_constraints(g, &raw_scores, lib, rules, threshold);
    Ok(PredictionResult {
        raw_scores,
        refined: r.nodes,
        applied_rules: r.audit,
        coref_arguments: BTreeMap::new(),
        sweeps: r.sweeps,
    })
}

/// Graph neighbours over hierarchy and temporal edges, both directions.
fn neighbours(lib: &SchemaLibrary, id: &EventId) -> BTreeSet<EventId> {
    let mut out = BTreeSet::new();
    if let Some(p) = lib.parent_of(id) {
        out.insert(p.clone());
    }
    out.extend(lib.children_of(id).into_iter().cloned());
    for r in &lib.relations {
        if &r.subject == id {
            out.insert(r.object.clone());
        }
        if &r.object == id {
            out.insert(r.subject.clone());
        }
    }
    out.remove(id);
    out
}

/// Each predicted node inherits the parameters of every extraction
/// coreferent with a matched neighbour's extraction.
pub fn coref_refine(
    mut result: PredictionResult,
    clusters: &CorefClusters,
    g: &InstantiatedGraph,
    lib: &SchemaLibrary,
    exts: &[ExtractedEvent],
) -> PredictionResult {
    let by_id: HashMap<&str, &ExtractedEvent> = exts.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut args = BTreeMap::new();
    for id in result.predicted() {
        let mut inherited = BTreeSet::new();
        for n in neighbours(lib, &id) {
            let Some(NodeState::Matched(x)) = g.nodes.get(&n) else {
                continue;
            };
            let members: Vec<&str> = match clusters.cluster_of(x) {
                Some(c) => c.iter().map(String::as_str).collect(),
                None => vec![x.as_str()],
            };
            for m in members {
                if let Some(e) = by_id.get(m) {
                    inherited.extend(e.parameters.iter().cloned());
                }
            }
        }
        args.insert(id, inherited);
    }
    result.coref_arguments = args;
    result
}
