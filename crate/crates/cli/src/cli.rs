//! Command-line entry points.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use regex::Regex;

use shield_core::induction::{clean_text_with, induce_schema, ChatClient, HttpChatClient, InductionError, PromptTemplate, ReplayClient};
use shield_core::ingest::{baseline_extract, load_extractions, save_extractions, Document, Gazetteer};
use shield_core::merge::merge_with_report;
use shield_core::metric::report;
use shield_core::pipeline::{run_ablation, run_pipeline_with_model, train_for_schema, AblationConfig, Stages, DEFAULT_GAZETTEER};
use shield_core::predictor::{load_checkpoint, save_checkpoint};
use shield_core::embedding::HashEmbedder;
use shield_core::schema::{parse_hierarchy_text, parse_sdf, serialize_sdf_pretty, validate, EventId, SchemaLibrary};
use shield_core::store::Store;

use crate::api::{router, AppState};
use crate::config::Config;

#[derive(Debug, Parser)]
#[command(name = "shield", version, about = "Event-schema curation and supply-chain disruption analysis")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Store directory for the service.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate, merge or display schema libraries.
    #[command(subcommand)]
    Schema(SchemaCommand),
    /// Induce a schema library from a document with a chat model.
    Induce(InduceArgs),
    /// Extract events from a document with the gazetteer baseline.
    Extract(ExtractArgs),
    /// Train a GCN on masked instantiations of a schema.
    Train(TrainArgs),
    /// Match extractions to a schema and predict unobserved events.
    Predict(PredictArgs),
    /// Score a learned library against a gold library, or run the ablation benchmark.
    Eval(EvalArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum SchemaCommand {
    Validate { file: PathBuf },
    Merge {
        #[arg(required = true, num_args = 1..)]
        files: Vec<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    Show {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = ShowFormat::Tree)]
        format: ShowFormat,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShowFormat {
    Tree,
    Sdf,
}

#[derive(Debug, Args)]
pub struct InduceArgs {
    document: PathBuf,
    /// Call the configured chat endpoint instead of replaying.
    #[arg(long)]
    live: bool,
    #[arg(long)]
    replay_dir: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    document: PathBuf,
    #[arg(long)]
    gazetteer: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    extractions: PathBuf,
    /// gcn_only, constraints or full.
    #[arg(long)]
    stages: Option<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Comma-separated ids of events that happened, for scoring.
    #[arg(long, value_delimiter = ',')]
    gold: Vec<String>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    learned: Option<PathBuf>,
    gold: Option<PathBuf>,
    /// Run the synthetic three-stage benchmark instead.
    #[arg(long, conflicts_with_all = ["learned", "gold"])]
    ablation: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    host: Option<String>,
    #[arg(long)]
    port: Option<u16>,
}

/// Failure classes with their exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Validation(String),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Validation(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Validation(m) => f.write_str(m),
            Failure::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

/// Parses a library from SDF JSON or hierarchy text, by content.
pub fn read_library(path: &Path) -> Result<SchemaLibrary, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Runtime)?;
    if text.trim_start().starts_with('{') {
        parse_sdf(&text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
    } else {
        let parsed = parse_hierarchy_text(&text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
        for w in &parsed.warnings {
            log::warn!("{}: {:?} {}", path.display(), w.kind, w.message);
        }
        Ok(parsed.library)
    }
}

/// A JSON document, or plain text with paragraphs separated by blank lines.
pub fn read_document(path: &Path) -> anyhow::Result<Document> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        return Ok(serde_json::from_str(&text)?);
    }
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("doc").to_string();
    let paragraphs = text
        .split("\n\n")
        .map(|p| p.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|p| !p.is_empty())
        .collect();
    Ok(Document {
        id,
        title: String::new(),
        published: None,
        paragraphs,
        source: path.display().to_string(),
    })
}

fn emit(output: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match output {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                out.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

/// Indented hierarchy followed by the temporal relations.
pub fn render_tree(lib: &SchemaLibrary) -> String {
    fn walk(lib: &SchemaLibrary, id: &EventId, importance: Option<f64>, depth: usize, out: &mut String) {
        let Some(ev) = lib.get(id) else { return };
        let imp = importance.map(|p| format!(" P{p}")).unwrap_or_default();
        let _ = writeln!(out, "{}{} [{}] gate={}{imp}", "  ".repeat(depth), ev.name, ev.id, ev.gate.token());
        for p in &ev.participants {
            walk(lib, &p.child_id, Some(p.importance), depth + 1, out);
        }
    }
    let mut out = String::new();
    for root in lib.roots() {
        walk(lib, root, None, 0, &mut out);
    }
    if !lib.relations.is_empty() {
        let rels: Vec<String> = lib.relations.iter().map(|r| r.to_string()).collect();
        let _ = writeln!(out, "relations: {}", rels.join(", "));
    }
    out
}

fn load_config(cli: &Cli) -> Result<Config, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p).map_err(|e| Failure::Usage(format!("config {}: {e:#}", p.display())))?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    if let Some(d) = &cli.data_dir {
        cfg.data_dir = Some(d.clone());
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Schema(cmd) => schema(cmd),
        Command::Induce(a) => induce(a, &cfg),
        Command::Extract(a) => extract(a),
        Command::Train(a) => train_cmd(a, &cfg),
        Command::Predict(a) => predict(a, &cfg),
        Command::Eval(a) => eval(a, &cfg),
        Command::Serve(a) => serve(a, &cfg),
    }
}

fn schema(cmd: SchemaCommand) -> Result<(), Failure> {
    match cmd {
        SchemaCommand::Validate { file } => {
            let lib = read_library(&file)?;
            let rep = validate(&lib);
            for w in &rep.warnings {
                println!("warning: {w:?}");
            }
            for e in &rep.errors {
                println!("error: {e:?}");
            }
            if rep.is_valid() {
                println!("ok: {} events, {} relations", lib.len(), lib.relations.len());
                Ok(())
            } else {
                Err(Failure::Validation(format!("{} validation error(s)", rep.errors.len())))
            }
        }
        SchemaCommand::Merge { files, output } => {
            let libs = files.iter().map(|f| read_library(f)).collect::<Result<Vec<_>, _>>()?;
            let out = merge_with_report(&libs).map_err(|e| Failure::Validation(e.to_string()))?;
            for w in &out.warnings {
                eprintln!("warning: {}", serde_json::to_string(w).unwrap_or_default());
            }
            emit(output.as_deref(), &serialize_sdf_pretty(&out.library))?;
            Ok(())
        }
        SchemaCommand::Show { file, format } => {
            let lib = read_library(&file)?;
            let text = match format {
                ShowFormat::Tree => render_tree(&lib),
                ShowFormat::Sdf => serialize_sdf_pretty(&lib),
            };
            emit(None, &text)?;
            Ok(())
        }
    }
}

fn induce(a: InduceArgs, cfg: &Config) -> Result<(), Failure> {
    let mut doc = read_document(&a.document)?;
    let extra = cfg
        .induction
        .clean_patterns
        .iter()
        .map(|p| Regex::new(p))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::Usage(format!("bad clean pattern: {e}")))?;
    for p in &mut doc.paragraphs {
        *p = clean_text_with(p, &extra);
    }
    let client: Box<dyn ChatClient> = if a.live || cfg.induction.live {
        Box::new(HttpChatClient::new(cfg.induction.chat.clone()))
    } else {
        let dir = a
            .replay_dir
            .or_else(|| cfg.induction.replay_dir.clone())
            .unwrap_or_else(|| PathBuf::from("replays"));
        Box::new(ReplayClient::new(dir))
    };
    let out = induce_schema(&doc, client.as_ref(), &PromptTemplate::default(), cfg.induction.audit_dir.as_deref())
        .map_err(|e| match e {
            InductionError::UnparseableResponse { .. } => Failure::Validation(e.to_string()),
            InductionError::EmptyInput => Failure::Usage(e.to_string()),
            other => Failure::Runtime(anyhow!(other)),
        })?;
    for w in &out.warnings {
        log::warn!("{:?} {}", w.kind, w.message);
    }
    emit(a.output.as_deref(), &serialize_sdf_pretty(&out.library))?;
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<(), Failure> {
    let doc = read_document(&a.document)?;
    let gaz_text = match &a.gazetteer {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => DEFAULT_GAZETTEER.to_string(),
    };
    let gaz = Gazetteer::parse(&gaz_text).map_err(|e| Failure::Validation(e.to_string()))?;
    emit(a.output.as_deref(), &save_extractions(&baseline_extract(&doc, &gaz)))?;
    Ok(())
}

fn train_cmd(a: TrainArgs, cfg: &Config) -> Result<(), Failure> {
    let lib = read_library(&a.schema)?;
    let p = &cfg.pipeline;
    let provider = HashEmbedder::new(p.embedding_dim);
    let model = train_for_schema(&lib, &provider, p.hidden, &p.dataset, &p.train).map_err(|e| Failure::Runtime(anyhow!(e)))?;
    emit(Some(&a.output), &save_checkpoint(&model))?;
    println!("wrote {} ({} parameters)", a.output.display(), model.param_count());
    Ok(())
}

fn predict(a: PredictArgs, cfg: &Config) -> Result<(), Failure> {
    let lib = read_library(&a.schema)?;
    let text = std::fs::read_to_string(&a.extractions).with_context(|| format!("reading {}", a.extractions.display()))?;
    let exts = load_extractions(&text, None).map_err(|e| Failure::Validation(e.to_string()))?;
    let mut pc = cfg.pipeline.clone();
    if let Some(s) = &a.stages {
        pc.stages = Stages::parse(s).ok_or_else(|| Failure::Usage(format!("unknown stages {s:?}")))?;
    }
    let model = match &a.checkpoint {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(load_checkpoint(&text).map_err(|e| Failure::Validation(e.to_string()))?)
        }
        None => None,
    };
    let gold: Option<BTreeSet<EventId>> = if a.gold.is_empty() {
        None
    } else {
        Some(
            a.gold
                .iter()
                .map(|g| EventId::parse(g.trim()).map_err(|e| Failure::Usage(e.to_string())))
                .collect::<Result<_, _>>()?,
        )
    };
    let out = run_pipeline_with_model(&lib, &exts, &pc, gold.as_ref(), model.as_ref())
        .map_err(|e| Failure::Runtime(anyhow!(e)))?;
    if a.json {
        emit(None, &serde_json::to_string_pretty(&out).map_err(|e| anyhow!(e))?)?;
    } else {
        let mut text = format!("matches: {}\n", out.matches.matches.len());
        for m in &out.matches.matches {
            let _ = writeln!(text, "  {} -> {} sim={:.6}", m.extracted_id, m.schema_id, m.sim);
        }
        text.push_str(&out.prediction.to_string());
        if let Some(prf) = &out.prf {
            let _ = writeln!(text, "precision: {:.6}\nrecall: {:.6}\nfscore: {:.6}", prf.precision, prf.recall, prf.fscore);
        }
        emit(None, &text)?;
    }
    Ok(())
}

fn eval(a: EvalArgs, cfg: &Config) -> Result<(), Failure> {
    if a.ablation {
        let ac = AblationConfig { seed: cfg.pipeline.train.seed, ..AblationConfig::default() };
        let rep = run_ablation(&ac).map_err(|e| Failure::Runtime(anyhow!(e)))?;
        if a.json {
            emit(None, &serde_json::to_string_pretty(&rep).map_err(|e| anyhow!(e))?)?;
        } else {
            for s in &rep.stages {
                println!("{:<12} F={:.6} P={:.6} R={:.6}", s.stages.token(), s.mean_f, s.mean_precision, s.mean_recall);
            }
            println!("evaluations: {}\nargument coverage: {:.6}", rep.evaluations, rep.argument_coverage);
        }
        return Ok(());
    }
    let (Some(l), Some(g)) = (a.learned, a.gold) else {
        return Err(Failure::Usage("eval needs LEARNED and GOLD, or --ablation".into()));
    };
    let (learned, gold) = (read_library(&l)?, read_library(&g)?);
    let rep = report(&learned, &gold, &cfg.metric);
    if a.json {
        emit(None, &serde_json::to_string_pretty(&rep).map_err(|e| anyhow!(e))?)?;
    } else {
        emit(None, &rep.to_string())?;
    }
    Ok(())
}

fn serve(a: ServeArgs, cfg: &Config) -> Result<(), Failure> {
    let store = Store::open(cfg.data_dir())
        .map_err(|e| Failure::Runtime(anyhow!(e)))?
        .with_lock_ttl(chrono::Duration::seconds(cfg.service.lock_ttl_secs));
    let state = AppState {
        store: Arc::new(store),
        metric: cfg.metric.clone(),
        ui_dir: cfg.service.ui_dir.clone(),
    };
    let host = a.host.unwrap_or_else(|| cfg.service.host.clone());
    let port = a.port.unwrap_or(cfg.service.port);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(anyhow!(e)))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        std::io::stdout().flush()?;
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    })?;
    Ok(())
}
