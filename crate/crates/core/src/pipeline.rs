//! End-to-end disruption analysis: extraction, matching, instantiation,
//! GCN scoring, constraint refinement and argument coreference.
//!
//! Also hosts the seeded synthetic benchmark used to compare the three
//! prediction stages.

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingProvider, HashEmbedder};
use crate::ingest::{baseline_extract, coref_link, CorefClusters, CorefConfig, Document, ExtractedEvent, Gazetteer};
use crate::matcher::{consistency_check, instantiate, match_events, ConsistencyReport, InstantiatedGraph, MatchConfig, MatchOutcome, NodeState};
use crate::metric::{identity_mapping, report_with_mapping, Prf};
use crate::predictor::{
    apply_constraints, coref_refine, feature_width, generate_training_set, node_embeddings, score_nodes,
    to_graph_samples, train, Activation, AdjacencyMode, DatasetConfig, GcnModel, PredictError, PredictionResult,
    RefinedState, RuleSet, TrainConfig,
};
use crate::schema::{validate, EventId, Gate, Participant, SchemaEvent, SchemaLibrary, TemporalRelation};
use crate::store::{Store, StoreError};

pub const DEFAULT_GAZETTEER: &str = include_str!("../assets/gazetteer.tsv");

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("stage {stage} failed: {cause}")]
    StageFailure { stage: String, cause: String },
}

fn stage_err(stage: &str) -> impl Fn(String) -> PipelineError + '_ {
    move |cause| PipelineError::StageFailure { stage: stage.to_string(), cause }
}

impl From<StoreError> for PipelineError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(what) => PipelineError::NotFound(what),
            other => PipelineError::StageFailure { stage: "store".into(), cause: other.to_string() },
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stages {
    GcnOnly,
    Constraints,
    #[default]
    Full,
}

impl Stages {
    pub const ALL: [Stages; 3] = [Stages::GcnOnly, Stages::Constraints, Stages::Full];

    pub fn token(self) -> &'static str {
        match self {
            Stages::GcnOnly => "gcn_only",
            Stages::Constraints => "constraints",
            Stages::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Stages> {
        Stages::ALL.into_iter().find(|st| st.token() == s)
    }

    pub fn rules(self) -> RuleSet {
        match self {
            Stages::GcnOnly => RuleSet::none(),
            _ => RuleSet::all(),
        }
    }

    pub fn coref(self) -> bool {
        self == Stages::Full
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub stages: Stages,
    pub embedding_dim: usize,
    pub hidden: usize,
    pub threshold: f64,
    pub matching: MatchConfig,
    pub coref: CorefConfig,
    pub train: TrainConfig,
    pub dataset: DatasetConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stages: Stages::Full,
            embedding_dim: 64,
            hidden: 16,
            threshold: 0.5,
            matching: MatchConfig::default(),
            coref: CorefConfig::default(),
            train: TrainConfig::default(),
            dataset: DatasetConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub matches: MatchOutcome,
    pub graph: InstantiatedGraph,
    pub consistency: ConsistencyReport,
    pub clusters: CorefClusters,
    pub prediction: PredictionResult,
    pub argument_coverage: f64,
    pub prf: Option<Prf>,
}

/// Trains a GCN on masked instantiations of `lib` itself.
pub fn train_for_schema(
    lib: &SchemaLibrary,
    provider: &dyn EmbeddingProvider,
    hidden: usize,
    dataset: &DatasetConfig,
    tc: &TrainConfig,
) -> Result<GcnModel, PredictError> {
    let emb = node_embeddings(lib, provider)?;
    let samples = generate_training_set(lib, dataset)?;
    let batch = to_graph_samples(lib, &samples, &emb);
    let dims = [feature_width(provider.dimension()), hidden];
    let mut model = GcnModel::new(&dims, Activation::Tanh, AdjacencyMode::SelfLoopSymNorm, tc.seed)?;
    train(&mut model, &batch, tc)?;
    Ok(model)
}

/// The sub-library induced by `keep`: events outside are dropped with
/// their links, and gates left without participants are cleared.
pub fn induced_sublibrary(lib: &SchemaLibrary, keep: &BTreeSet<EventId>) -> SchemaLibrary {
    let mut out = SchemaLibrary::new();
    for c in &lib.contexts {
        out.add_context(c);
    }
    for ev in lib.events.values().filter(|e| keep.contains(&e.id)) {
        let mut ev = ev.clone();
        ev.participants.retain(|p| keep.contains(&p.child_id));
        if ev.participants.is_empty() {
            ev.gate = Gate::None;
        }
        out.insert(ev);
    }
    out.relations = lib
        .relations
        .iter()
        .filter(|r| keep.contains(&r.subject) && keep.contains(&r.object))
        .cloned()
        .collect();
    out
}

/// Quadruple F-score of the MATCHED plus PREDICTED nodes against the gold
/// set of events that happened, with events aligned by id.
pub fn node_set_prf(lib: &SchemaLibrary, result: &PredictionResult, gold: &BTreeSet<EventId>) -> Prf {
    let kept: BTreeSet<EventId> = result
        .refined
        .iter()
        .filter(|(_, n)| n.state != RefinedState::NotPredicted)
        .map(|(id, _)| id.clone())
        .collect();
    let learned = induced_sublibrary(lib, &kept);
    let gold = induced_sublibrary(lib, gold);
    let mapping = identity_mapping(&learned, &gold);
    report_with_mapping(&learned, &gold, mapping, 1e-9).prf()
}

/// Share of predicted nodes that inherited at least one argument.
pub fn argument_coverage(result: &PredictionResult) -> f64 {
    let predicted = result.predicted();
    if predicted.is_empty() {
        return 0.0;
    }
    let covered = predicted
        .iter()
        .filter(|id| result.coref_arguments.get(*id).is_some_and(|a| !a.is_empty()))
        .count();
    covered as f64 / predicted.len() as f64
}

/// Scores, refines and (for the full stage) enriches one instantiated graph.
#[allow(clippy::too_many_arguments)]
pub fn predict_stage(
    model: &GcnModel,
    g: &InstantiatedGraph,
    lib: &SchemaLibrary,
    emb: &ndarray::Array2<f64>,
    exts: &[ExtractedEvent],
    clusters: &CorefClusters,
    stages: Stages,
    threshold: f64,
) -> Result<PredictionResult, PredictError> {
    let raw_scores = score_nodes(model, g, lib, emb)?;
    let r = apply_constraints(g, &raw_scores, lib, &stages.rules(), threshold);
    let result = PredictionResult {
        raw_scores,
        refined: r.nodes,
        applied_rules: r.audit,
        coref_arguments: Default::default(),
        sweeps: r.sweeps,
    };
    Ok(if stages.coref() {
        coref_refine(result, clusters, g, lib, exts)
    } else {
        result
    })
}

pub fn run_pipeline(
    lib: &SchemaLibrary,
    exts: &[ExtractedEvent],
    cfg: &PipelineConfig,
    gold: Option<&BTreeSet<EventId>>,
) -> Result<PipelineOutput, PipelineError> {
    run_pipeline_with_model(lib, exts, cfg, gold, None)
}

/// Like [`run_pipeline`], with a pretrained model instead of training one
/// on the schema.
pub fn run_pipeline_with_model(
    lib: &SchemaLibrary,
    exts: &[ExtractedEvent],
    cfg: &PipelineConfig,
    gold: Option<&BTreeSet<EventId>>,
    model: Option<&GcnModel>,
) -> Result<PipelineOutput, PipelineError> {
    let report = validate(lib);
    if !report.is_valid() {
        return Err(stage_err("schema")(format!("invalid schema: {:?}", report.error_codes())));
    }
    let provider = HashEmbedder::new(cfg.embedding_dim);
    let clusters = if cfg.stages.coref() {
        coref_link(exts, Some(&provider), &cfg.coref).map_err(|e| stage_err("coref")(e.to_string()))?
    } else {
        CorefClusters::singletons(exts.iter().map(|e| e.id.clone()))
    };
    let matches = match_events(exts, lib, &provider, &cfg.matching).map_err(|e| stage_err("match")(e.to_string()))?;
    let graph = instantiate(&matches.matches, lib, exts).map_err(|e| stage_err("instantiate")(e.to_string()))?;
    let consistency = consistency_check(&graph, lib);
    let trained;
    let model = match model {
        Some(m) => m,
        None => {
            trained = train_for_schema(lib, &provider, cfg.hidden, &cfg.dataset, &cfg.train)
                .map_err(|e| stage_err("train")(e.to_string()))?;
            &trained
        }
    };
    let emb = node_embeddings(lib, &provider).map_err(|e| stage_err("predict")(e.to_string()))?;
    let prediction = predict_stage(model, &graph, lib, &emb, exts, &clusters, cfg.stages, cfg.threshold)
        .map_err(|e| stage_err("predict")(e.to_string()))?;
    let prf = gold.map(|g| node_set_prf(lib, &prediction, g));
    Ok(PipelineOutput {
        argument_coverage: argument_coverage(&prediction),
        matches,
        graph,
        consistency,
        clusters,
        prediction,
        prf,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunRequest {
    pub schema_id: String,
    pub version: Option<u32>,
    pub extraction_id: Option<String>,
    pub document: Option<Document>,
    pub config: Option<PipelineConfig>,
    pub gold_events: Option<Vec<EventId>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub id: String,
    pub schema_id: String,
    pub schema_version: u32,
    pub extraction_id: String,
    pub config: PipelineConfig,
    pub output: PipelineOutput,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

/// Resolves the request against the store, runs the pipeline and persists
/// the run. A raw document is extracted with the built-in gazetteer and
/// stored as a new extraction set.
pub fn run_stored(store: &Store, req: &RunRequest) -> Result<PipelineRun, PipelineError> {
    let started_at = store.now();
    let schema = store.get_schema(&req.schema_id, req.version)?;
    let (extraction_id, exts) = match (&req.extraction_id, &req.document) {
        (Some(id), _) => (id.clone(), store.load_extractions(id)?),
        (None, Some(doc)) => {
            let gaz = Gazetteer::parse(DEFAULT_GAZETTEER).map_err(|e| stage_err("extract")(e.to_string()))?;
            let exts = baseline_extract(doc, &gaz);
            (store.save_extractions(&exts)?, exts)
        }
        (None, None) => return Err(stage_err("extract")("need an extraction id or a document".into())),
    };
    let config = req.config.clone().unwrap_or_default();
    let gold: Option<BTreeSet<EventId>> = req.gold_events.as_ref().map(|g| g.iter().cloned().collect());
    let output = run_pipeline(&schema.library, &exts, &config, gold.as_ref())?;
    let run = PipelineRun {
        id: uuid::Uuid::new_v4().simple().to_string(),
        schema_id: schema.id,
        schema_version: schema.version,
        extraction_id,
        config,
        output,
        started_at,
        finished_at: store.now(),
    };
    store.save_run(&run.id, &run)?;
    Ok(run)
}

/// A random valid schema with a single root, at most four levels, and no
/// temporal relations among the children of XOR events.
pub fn synthetic_schema(n_events: usize, rng: &mut impl Rng) -> SchemaLibrary {
    let n_events = n_events.max(1);
    let root = EventId::from_parts(&[1]);
    let mut order = vec![root.clone()];
    let mut children: Vec<Vec<EventId>> = vec![Vec::new()];
    while order.len() < n_events {
        let open: Vec<usize> = (0..order.len()).filter(|&i| order[i].depth() < 4).collect();
        let &p = open.choose(rng).expect("root is always open");
        let child = order[p].child(children[p].len() as u32 + 1);
        children[p].push(child.clone());
        order.push(child);
        children.push(Vec::new());
    }
    let mut lib = SchemaLibrary::new();
    lib.add_context("synthetic");
    for (i, id) in order.iter().enumerate() {
        let mut ev = SchemaEvent::new(id.clone(), format!("event {id}"));
        ev.description = format!("synthetic event {id}");
        if !children[i].is_empty() {
            ev.gate = match rng.random_range(0..10) {
                0..=2 => Gate::And,
                3..=7 => Gate::Or,
                _ => Gate::Xor,
            };
            ev.participants = children[i]
                .iter()
                .map(|c| Participant {
                    child_id: c.clone(),
                    importance: if rng.random_bool(0.5) { 1.0 } else { 0.5 },
                })
                .collect();
            if ev.gate != Gate::Xor {
                for a in 0..children[i].len() {
                    for b in a + 1..children[i].len() {
                        if rng.random_bool(0.3) {
                            lib.relations.push(TemporalRelation::new(children[i][a].clone(), children[i][b].clone()));
                        }
                    }
                }
            }
        }
        lib.insert(ev);
    }
    lib
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub schemas: usize,
    pub min_events: usize,
    pub max_events: usize,
    pub instances: usize,
    pub seed: u64,
    pub embedding_dim: usize,
    pub hidden: usize,
    pub train_samples: usize,
    pub mask_fraction: f64,
    pub threshold: f64,
    pub train: TrainConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            schemas: 20,
            min_events: 15,
            max_events: 40,
            instances: 10,
            seed: 42,
            embedding_dim: 16,
            hidden: 16,
            train_samples: 64,
            mask_fraction: 0.5,
            threshold: 0.5,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageScores {
    pub stages: Stages,
    pub mean_f: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub stages: Vec<StageScores>,
    pub evaluations: usize,
    /// Mean argument coverage of the full stage.
    pub argument_coverage: f64,
}

impl AblationReport {
    pub fn mean_f(&self, stages: Stages) -> f64 {
        self.stages.iter().find(|s| s.stages == stages).map_or(f64::NAN, |s| s.mean_f)
    }
}

/// One synthetic extraction per matched node, carrying a parameter that
/// names the node.
fn synthetic_extractions(g: &InstantiatedGraph) -> Vec<ExtractedEvent> {
    g.nodes
        .iter()
        .filter_map(|(id, s)| match s {
            NodeState::Matched(x) => Some(ExtractedEvent::new(x.clone(), "synthetic", format!("event {id}")).with_parameters([format!("node={id}")])),
            NodeState::Unmatched => None,
        })
        .collect()
}

/// Trains one GCN per synthetic schema and evaluates every stage on fresh
/// masked instantiations. Training and evaluation draws use distinct seeds.
pub fn run_ablation(cfg: &AblationConfig) -> Result<AblationReport, PipelineError> {
    if cfg.min_events < 3 || cfg.max_events < cfg.min_events || cfg.schemas == 0 || cfg.instances == 0 {
        return Err(stage_err("ablation")("invalid benchmark size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let provider = HashEmbedder::new(cfg.embedding_dim);
    let mut sums = [[0.0f64; 3]; 3];
    let mut coverage = 0.0;
    let mut evaluations = 0;
    for s in 0..cfg.schemas {
        let n = rng.random_range(cfg.min_events..=cfg.max_events);
        let lib = synthetic_schema(n, &mut rng);
        let base = cfg.seed.wrapping_mul(1_000_003).wrapping_add(s as u64 * 2);
        let train_set = DatasetConfig { mask_fraction: cfg.mask_fraction, count: cfg.train_samples, seed: base };
        let eval_set = DatasetConfig { mask_fraction: cfg.mask_fraction, count: cfg.instances, seed: base + 1 };
        let tc = TrainConfig { seed: base, ..cfg.train.clone() };
        let model = train_for_schema(&lib, &provider, cfg.hidden, &train_set, &tc)
            .map_err(|e| stage_err("train")(e.to_string()))?;
        let emb = node_embeddings(&lib, &provider).map_err(|e| stage_err("predict")(e.to_string()))?;
        let samples = generate_training_set(&lib, &eval_set).map_err(|e| stage_err("dataset")(e.to_string()))?;
        for sample in &samples {
            let exts = synthetic_extractions(&sample.graph);
            let clusters =
                coref_link(&exts, None, &CorefConfig::default()).map_err(|e| stage_err("coref")(e.to_string()))?;
            for (k, stages) in Stages::ALL.into_iter().enumerate() {
                let r = predict_stage(&model, &sample.graph, &lib, &emb, &exts, &clusters, stages, cfg.threshold)
                    .map_err(|e| stage_err("predict")(e.to_string()))?;
                let prf = node_set_prf(&lib, &r, &sample.occurred);
                sums[k][0] += prf.fscore;
                sums[k][1] += prf.precision;
                sums[k][2] += prf.recall;
                if stages == Stages::Full {
                    coverage += argument_coverage(&r);
                }
            }
            evaluations += 1;
        }
    }
    let n = evaluations as f64;
    Ok(AblationReport {
        stages: Stages::ALL
            .into_iter()
            .zip(sums)
            .map(|(stages, s)| StageScores { stages, mean_f: s[0] / n, mean_precision: s[1] / n, mean_recall: s[2] / n })
            .collect(),
        evaluations,
        argument_coverage: coverage / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::check_rules;
    use crate::schema::fixtures::RECYCLING_TEXT;
    use crate::schema::parse_hierarchy_text;

    fn recycling() -> SchemaLibrary {
        parse_hierarchy_text(RECYCLING_TEXT).unwrap().library
    }

    fn small() -> PipelineConfig {
        PipelineConfig {
            embedding_dim: 16,
            train: TrainConfig { epochs: 30, ..TrainConfig::default() },
            dataset: DatasetConfig { count: 16, ..DatasetConfig::default() },
            ..PipelineConfig::default()
        }
    }

    fn exts() -> Vec<ExtractedEvent> {
        vec![
            ExtractedEvent::new("x1", "d", "pyrometallurgical").with_parameters(["method=pyrometallurgical"]),
            ExtractedEvent::new("x2", "d", "metal oxides").with_parameters(["material=cobalt"]),
        ]
    }

    #[test]
    fn synthetic_schemas_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1, 3, 15, 40] {
            let lib = synthetic_schema(n, &mut rng);
            assert_eq!(lib.len(), n);
            assert!(validate(&lib).is_valid(), "{:?}", validate(&lib).error_codes());
            for r in &lib.relations {
                let p = lib.parent_of(&r.subject).unwrap();
                assert_ne!(lib.get(p).unwrap().gate, Gate::Xor);
            }
        }
    }

    #[test]
    fn full_run_passes_checker() {
        let lib = recycling();
        let out = run_pipeline(&lib, &exts(), &small(), None).unwrap();
        assert!(out.graph.matched_count() >= 1);
        let refinement = crate::predictor::Refinement {
            nodes: out.prediction.refined.clone(),
            audit: out.prediction.applied_rules.clone(),
            sweeps: out.prediction.sweeps,
        };
        assert!(check_rules(&refinement, &lib, &RuleSet::all()).is_empty());
    }

    #[test]
    fn gcn_only_has_empty_audit() {
        let cfg = PipelineConfig { stages: Stages::GcnOnly, ..small() };
        let out = run_pipeline(&recycling(), &exts(), &cfg, None).unwrap();
        assert!(out.prediction.applied_rules.is_empty());
        assert!(out.prediction.coref_arguments.is_empty());
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let lib = recycling();
        let all: BTreeSet<EventId> = lib.event_ids().cloned().collect();
        let result = PredictionResult {
            raw_scores: Default::default(),
            refined: lib
                .event_ids()
                .map(|id| (id.clone(), crate::predictor::RefinedNode { state: RefinedState::Predicted, score: 1.0 }))
                .collect(),
            applied_rules: vec![],
            coref_arguments: Default::default(),
            sweeps: 0,
        };
        assert_eq!(node_set_prf(&lib, &result, &all).fscore, 1.0);
        let sub = induced_sublibrary(&lib, &[EventId::parse("ev1").unwrap()].into());
        assert_eq!(sub.len(), 1);
        assert_eq!(sub.get(&EventId::parse("ev1").unwrap()).unwrap().gate, Gate::None);
    }

    #[test]
    fn stored_run_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let s = store.create_schema(&recycling(), "a").unwrap();
        let doc = Document {
            id: "d1".into(),
            title: String::new(),
            published: None,
            paragraphs: vec!["Pyrometallurgical recycling of cobalt stalled after the smelting plant fire.".into()],
            source: String::new(),
        };
        let req = RunRequest {
            schema_id: s.id.clone(),
            document: Some(doc),
            config: Some(small()),
            gold_events: Some(vec![EventId::parse("ev1").unwrap()]),
            ..RunRequest::default()
        };
        let run = run_stored(&store, &req).unwrap();
        assert!(run.output.prf.is_some());
        assert_eq!(store.load_run::<PipelineRun>(&run.id).unwrap(), run);
        assert!(!store.load_extractions(&run.extraction_id).unwrap().is_empty());
        let missing = RunRequest { schema_id: "nope".into(), ..req };
        assert!(matches!(run_stored(&store, &missing), Err(PipelineError::NotFound(_))));
    }
}
