//! The `chitchat` operator command line: data generation, training, mining,
//! annotation, classification, evaluation and serving. Each subcommand is a
//! thin layer over `chitchat_core`; results go to stdout as JSON (tables for
//! `eval`), failures to stderr as `{"error":{"code":..,"message":..}}`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use chitchat_core::chat_domain::{self, ChatDomainConfig, ChatDomainModel};
use chitchat_core::dataset::{self, GenericExample};
use chitchat_core::generic::{train_generic, GenericConfig};
use chitchat_core::intent::IntentKind;
use chitchat_core::metrics::evaluate;
use chitchat_core::mining::{
    apply_decision_set, cluster, rank_and_export, AnnotationBatch, AnnotationError, DecisionSet, MiningConfig,
    MiningMode,
};
use chitchat_core::moderation::Moderator;
use chitchat_core::pipeline::{generic_features, Engine, EngineConfig, UnderstandResponse};
use chitchat_core::store::{IntentStore, StoreContent};
use chitchat_core::synth::{self, SynthConfig};
use chitchat_core::{Analyzer, Error};
use chitchat_service::ServiceConfig;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(name = "chitchat", version, about = "Chit-chat query understanding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a labelled synthetic corpus (training files, query log, test set, seed store).
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train the chat-domain ensemble from a judged/augmented file.
    TrainDomain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Train the generic-intent network. Curated queries of the store's
    /// generic intents are added to the training file.
    TrainGeneric {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        store: Option<PathBuf>,
        /// Chat-domain model supplying the chat-score features.
        #[arg(long)]
        domain_model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Cluster a query log and export a ranked annotation batch.
    Mine {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        min_points: Option<usize>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Review decisions for mined batches.
    #[command(subcommand)]
    Annotate(AnnotateCommand),
    /// Intent store maintenance.
    #[command(subcommand)]
    Store(StoreCommand),
    /// Run one query through the pipeline and print the response.
    Classify {
        #[arg(long)]
        text: String,
        #[arg(long)]
        trace: bool,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Score a labelled test set, locally or against a running service.
    Eval {
        #[arg(long)]
        testset: PathBuf,
        /// Base URL of a running service, e.g. http://127.0.0.1:8080.
        #[arg(long, conflicts_with_all = ["config", "store", "domain_model", "generic_model", "rules"])]
        endpoint: Option<String>,
        #[command(flatten)]
        engine: EngineArgs,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        port: Option<u16>,
    },
}

#[derive(Debug, Subcommand)]
pub enum AnnotateCommand {
    /// Apply a fully decided batch to the store as a new snapshot.
    Apply {
        #[arg(long)]
        batch: PathBuf,
        #[arg(long)]
        decisions: PathBuf,
        #[arg(long)]
        store: PathBuf,
    },
    /// Decide a batch from ground-truth query labels (synthetic reviewer).
    Script {
        #[arg(long)]
        batch: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum StoreCommand {
    /// Save intents from a JSON file as a new snapshot.
    Import {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        content: PathBuf,
    },
    /// List snapshot versions.
    Versions {
        #[arg(long)]
        store: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Specific,
    Generic,
}

impl From<Mode> for MiningMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Specific => MiningMode::Specific,
            Mode::Generic => MiningMode::Generic,
        }
    }
}

/// Either a service config file or explicit model and store paths.
#[derive(Debug, Clone, Default, Args)]
pub struct EngineArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub domain_model: Option<PathBuf>,
    #[arg(long)]
    pub generic_model: Option<PathBuf>,
    #[arg(long)]
    pub rules: Option<PathBuf>,
}

impl EngineArgs {
    pub fn engine_config(&self) -> Result<EngineConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                require(path)?;
                ServiceConfig::load(path)?.engine_config()
            }
            None => {
                let missing = |flag: &str| CliError::usage(format!("--{flag} is required without --config"));
                EngineConfig {
                    store: self.store.clone().ok_or_else(|| missing("store"))?,
                    store_version: None,
                    domain_model: self.domain_model.clone().ok_or_else(|| missing("domain-model"))?,
                    generic_model: self.generic_model.clone().ok_or_else(|| missing("generic-model"))?,
                    rules: None,
                    moderation: Default::default(),
                }
            }
        };
        if let Some(s) = &self.store {
            cfg.store = s.clone();
        }
        if let Some(d) = &self.domain_model {
            cfg.domain_model = d.clone();
        }
        if let Some(g) = &self.generic_model {
            cfg.generic_model = g.clone();
        }
        if let Some(r) = &self.rules {
            cfg.rules = Some(r.clone());
        }
        require(&cfg.store)?;
        require(&cfg.domain_model)?;
        require(&cfg.generic_model)?;
        if let Some(r) = &cfg.rules {
            require(r)?;
        }
        Ok(cfg)
    }
}

/// A failure with a stable machine-readable code.
#[derive(Debug)]
pub struct CliError {
    pub code: String,
    pub message: String,
    pub details: Option<Value>,
    pub exit_code: i32,
}

impl CliError {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
            details: None,
            exit_code: 1,
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            exit_code: 2,
            ..Self::new("usage", message)
        }
    }

    pub fn with_details(mut self, details: impl Into<Value>) -> Self {
        self.details = Some(details.into());
        self
    }

    pub fn to_json(&self) -> Value {
        let mut e = json!({ "code": self.code, "message": self.message });
        if let Some(d) = &self.details {
            e["details"] = d.clone();
        }
        json!({ "error": e })
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidInput(_) => "invalid_input",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::EmptyCorpus => "empty_corpus",
            Error::SingleClass => "single_class",
            Error::TooFewExamples { .. } => "too_few_examples",
            Error::NeighbourUndefined => "neighbour_undefined",
            Error::Pattern { .. } => "pattern",
            Error::Moderation(_) => "moderation_unavailable",
            Error::VersionNotFound(_) => "version_not_found",
            Error::EmptyStore => "empty_store",
            Error::Corrupt { .. } => "corrupt",
            Error::FormatVersion { .. } => "format_version",
            Error::Io { .. } => "io",
            Error::Parse { .. } | Error::Json(_) => "parse",
            Error::Annotation(a) => return a.clone().into(),
        };
        Self::new(code, e.to_string())
    }
}

impl From<AnnotationError> for CliError {
    fn from(e: AnnotationError) -> Self {
        let (code, details) = match &e {
            AnnotationError::Undecided(ids) => ("undecided", Some(json!({ "undecided": ids }))),
            AnnotationError::UnknownCluster(id) => ("unknown_cluster", Some(json!({ "cluster_id": id }))),
            AnnotationError::Conflict(id) => ("conflict", Some(json!({ "cluster_id": id }))),
            AnnotationError::MergeTargetNotChosen { cluster, target } => (
                "merge_target_not_chosen",
                Some(json!({ "cluster_id": cluster, "target": target })),
            ),
            AnnotationError::MissingReason(id) => ("missing_reason", Some(json!({ "cluster_id": id }))),
            AnnotationError::InvalidName(id) => ("invalid_name", Some(json!({ "cluster_id": id }))),
            AnnotationError::DuplicateName(n) => ("duplicate_name", Some(json!({ "intent_name": n }))),
            AnnotationError::BatchMismatch { .. } => ("batch_mismatch", None),
        };
        Self {
            details,
            ..Self::new(code, e.to_string())
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new("parse", e.to_string())
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    Error::Io {
        path: path.to_owned(),
        source: e,
    }
    .into()
}

fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::new("missing_file", format!("{} does not exist", path.display())))
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| io_error(path, e))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

/// Writes through a temporary sibling so readers never see a partial file.
fn write_atomic(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> Result<(), CliError>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut out = File::create(&tmp).map(BufWriter::new).map_err(|e| io_error(&tmp, e))?;
    write(&mut out)?;
    out.flush().map_err(|e| io_error(&tmp, e))?;
    drop(out);
    fs::rename(&tmp, path).map_err(|e| io_error(path, e))
}

/// What a successful command prints.
#[derive(Debug)]
pub enum Output {
    Json(Value),
    Text(String),
    /// Already printed (long-running commands).
    None,
}

pub fn run(cli: Cli) -> Result<Output, CliError> {
    match cli.command {
        Command::SynthCorpus { out, seed } => synth_corpus(&out, seed),
        Command::TrainDomain { data, out, seed } => train_domain(&data, &out, seed),
        Command::TrainGeneric {
            data,
            store,
            domain_model,
            out,
            seed,
            epochs,
            learning_rate,
        } => {
            let mut cfg = GenericConfig::with_seed(seed);
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(lr) = learning_rate {
                cfg.train.learning_rate = lr;
            }
            train_generic_cmd(&data, store.as_deref(), &domain_model, &out, &cfg)
        }
        Command::Mine {
            queries,
            mode,
            out,
            epsilon,
            min_points,
            top_k,
        } => {
            let mut cfg = MiningConfig::for_mode(mode.into());
            if let Some(e) = epsilon {
                cfg.epsilon = e;
            }
            if let Some(m) = min_points {
                cfg.min_points = m;
            }
            if let Some(k) = top_k {
                cfg.top_k = k;
            }
            mine(&queries, &out, &cfg)
        }
        Command::Annotate(AnnotateCommand::Apply { batch, decisions, store }) => annotate_apply(&batch, &decisions, &store),
        Command::Annotate(AnnotateCommand::Script { batch, labels, out }) => annotate_script(&batch, &labels, &out),
        Command::Store(StoreCommand::Import { store, content }) => store_import(&store, &content),
        Command::Store(StoreCommand::Versions { store }) => {
            require(&store)?;
            let s = IntentStore::open(&store)?;
            Ok(Output::Json(json!({ "versions": s.versions()?, "latest": s.latest_version()? })))
        }
        Command::Classify { text, trace, engine } => {
            let engine = Engine::load(&engine.engine_config()?)?;
            Ok(Output::Json(serde_json::to_value(engine.understand(&text, trace)?)?))
        }
        Command::Eval {
            testset,
            endpoint,
            engine,
            json,
        } => eval(&testset, endpoint.as_deref(), &engine, json.as_deref()),
        Command::Serve { config, port } => serve(&config, port),
    }
}

fn synth_corpus(out: &Path, seed: u64) -> Result<Output, CliError> {
    let corpus = synth::generate(&SynthConfig::with_seed(seed));
    corpus.write_dir(out)?;
    Ok(Output::Json(json!({
        "out": out,
        "seed": seed,
        "domain_records": corpus.domain.len(),
        "queries": corpus.log.len(),
        "generic_examples": corpus.generic.len(),
        "test_records": corpus.tests.len(),
        "seed_intents": corpus.seed_store.intents.len(),
    })))
}

fn train_domain(data: &Path, out: &Path, seed: u64) -> Result<Output, CliError> {
    require(data)?;
    let records = dataset::read_domain_records(open(data)?)?;
    let examples = dataset::domain_training_set(&records)?;
    let model = chat_domain::train(&examples, &Analyzer::default(), &ChatDomainConfig::with_seed(seed))?;
    write_atomic(out, |w| Ok(model.write(w)?))?;
    Ok(Output::Json(json!({ "out": out, "seed": seed, "summary": model.summary })))
}

fn read_domain_model(path: &Path) -> Result<ChatDomainModel, CliError> {
    require(path)?;
    Ok(ChatDomainModel::read(open(path)?)?)
}

fn train_generic_cmd(
    data: &Path,
    store: Option<&Path>,
    domain_model: &Path,
    out: &Path,
    cfg: &GenericConfig,
) -> Result<Output, CliError> {
    require(data)?;
    if let Some(s) = store {
        require(s)?;
    }
    let domain = read_domain_model(domain_model)?;
    let mut examples = dataset::read_generic_examples(open(data)?)?;
    let from_file = examples.len();
    if let Some(s) = store {
        let snapshot = IntentStore::open(s)?.load_latest()?;
        for intent in snapshot.intents().iter().filter(|i| i.kind == IntentKind::Generic) {
            examples.extend(intent.curated_queries.iter().map(|q| GenericExample {
                text: q.text.clone(),
                class: intent.id.clone(),
            }));
        }
    }
    let analyzer = Analyzer::default();
    let moderator = Moderator::default();
    let rows = examples
        .iter()
        .map(|e| {
            let f = analyzer.analyze(&e.text);
            Ok((generic_features(&f, &domain, &moderator, &e.text)?, e.class.clone()))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let model = train_generic(&rows, cfg)?;
    write_atomic(out, |w| Ok(model.write(w)?))?;
    Ok(Output::Json(json!({
        "out": out,
        "seed": cfg.train.seed,
        "examples": rows.len(),
        "examples_from_store": rows.len() - from_file,
        "classes": model.class_ids,
        "heldout_accuracy": model.heldout_accuracy,
    })))
}

fn mine(queries: &Path, out: &Path, cfg: &MiningConfig) -> Result<Output, CliError> {
    require(queries)?;
    cfg.validate()?;
    let log = dataset::read_query_log(open(queries)?)?;
    let analyzer = Analyzer::default();
    let points: Vec<_> = log
        .into_iter()
        .map(|q| {
            let e = analyzer.analyze(&q.text).semantic;
            (q, e)
        })
        .filter(|(_, e)| !e.is_zero())
        .collect();
    let clusters = cluster(&points, cfg)?;
    let batch = rank_and_export(&clusters, cfg);
    let text = batch.to_json()?;
    write_atomic(out, |w| w.write_all(text.as_bytes()).map_err(|e| io_error(out, e)))?;
    Ok(Output::Json(json!({
        "out": out,
        "batch_id": batch.batch_id,
        "mode": batch.mode,
        "queries": points.len(),
        "total_clusters": batch.total_clusters,
        "exported": batch.clusters.len(),
    })))
}

fn read_batch(path: &Path) -> Result<AnnotationBatch, CliError> {
    require(path)?;
    Ok(AnnotationBatch::from_json(&read_text(path)?)?)
}

fn annotate_apply(batch: &Path, decisions: &Path, store: &Path) -> Result<Output, CliError> {
    require(decisions)?;
    let batch = read_batch(batch)?;
    let set = DecisionSet::from_json(&read_text(decisions)?)?;
    let outcome = apply_decision_set(&batch, &set)?;
    let store = IntentStore::open(store)?;
    store.save_batch(&batch)?;
    store.save_decisions(&set)?;
    let (snapshot, diff) = store.apply_outcome(outcome, Some(&Analyzer::default()))?;
    Ok(Output::Json(json!({
        "batch_id": batch.batch_id,
        "version": snapshot.version,
        "parent_version": snapshot.parent_version,
        "intents": snapshot.intents().len(),
        "diff": diff,
    })))
}

fn annotate_script(batch: &Path, labels: &Path, out: &Path) -> Result<Output, CliError> {
    require(labels)?;
    let batch = read_batch(batch)?;
    let labels = dataset::read_query_labels(open(labels)?)?;
    let set = synth::scripted_decisions(&batch, &labels);
    let text = set.to_json()?;
    write_atomic(out, |w| w.write_all(text.as_bytes()).map_err(|e| io_error(out, e)))?;
    let count = |action: &str| {
        set.decisions
            .iter()
            .filter(|d| serde_json::to_value(d).is_ok_and(|v| v["action"] == action))
            .count()
    };
    Ok(Output::Json(json!({
        "out": out,
        "batch_id": set.batch_id,
        "chosen": count("choose"),
        "merged": count("merge"),
        "rejected": count("reject"),
    })))
}

fn store_import(store: &Path, content: &Path) -> Result<Output, CliError> {
    require(content)?;
    let c: StoreContent = serde_json::from_str(&read_text(content)?)?;
    let snapshot = IntentStore::open(store)?.save(c, &[], Some(&Analyzer::default()))?;
    Ok(Output::Json(json!({
        "store": store,
        "version": snapshot.version,
        "parent_version": snapshot.parent_version,
        "intents": snapshot.intents().len(),
        "content_hash": snapshot.content_hash,
    })))
}

fn eval(testset: &Path, endpoint: Option<&str>, engine: &EngineArgs, json_out: Option<&Path>) -> Result<Output, CliError> {
    require(testset)?;
    let records = dataset::read_test_records(open(testset)?)?;
    let responses = match endpoint {
        Some(url) => remote_responses(url, records.iter().map(|r| r.text.as_str()))?,
        None => {
            let engine = Engine::load(&engine.engine_config()?)?;
            records
                .iter()
                .map(|r| engine.understand(&r.text, true))
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    let report = evaluate(&records, &responses);
    if let Some(p) = json_out {
        let text = serde_json::to_string_pretty(&report)? + "\n";
        write_atomic(p, |w| w.write_all(text.as_bytes()).map_err(|e| io_error(p, e)))?;
    }
    Ok(Output::Text(report.render()))
}

/// Posts every text to `{base}/v1/understand` with a trace.
pub fn remote_responses<'a>(
    base: &str,
    texts: impl IntoIterator<Item = &'a str>,
) -> Result<Vec<UnderstandResponse>, CliError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(30)))
        .http_status_as_error(false)
        .build()
        .into();
    let url = format!("{}/v1/understand", base.trim_end_matches('/'));
    let mut out = Vec::new();
    for text in texts {
        let mut resp = agent
            .post(&url)
            .send_json(json!({ "text": text, "trace": true }))
            .map_err(|e| CliError::new("endpoint_unreachable", format!("{url}: {e}")))?;
        let status = resp.status();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| CliError::new("endpoint_unreachable", format!("{url}: {e}")))?;
        if !status.is_success() {
            let err: Value = serde_json::from_str(&body).unwrap_or(Value::Null);
            return Err(CliError {
                details: Some(err),
                ..CliError::new("endpoint_error", format!("{url} answered {status} for {text:?}"))
            });
        }
        out.push(serde_json::from_str(&body)?);
    }
    Ok(out)
}

fn serve(config: &Path, port: Option<u16>) -> Result<Output, CliError> {
    require(config)?;
    let mut cfg = ServiceConfig::load(config)?;
    if let Some(p) = port {
        cfg.port = p;
    }
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .try_init();
    chitchat_service::run(cfg, |addr| {
        println!("{}", json!({ "listening": addr.to_string() }));
        let _ = std::io::stdout().flush();
    })?;
    Ok(Output::None)
}
