//! Command line front end.
//!
//! Exit codes: 0 on success (per-item failures are summarized on stderr),
//! 1 on usage errors, 2 on fatal config or IO errors, 130 when interrupted.

use std::collections::HashMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use factdial_core::metrics::{cohen_kappa, raw_agreement, LabelPair};
use factdial_core::pcst::pcst_sense_graph;
use factdial_core::reformulation::ReformulatedDialogue;
use factdial_core::{AliasLinker, Dialogue, DialogueSenseGraph, KnowledgeSnapshot, Response};
use serde::Serialize;

use crate::config::{existing, AppConfig, ConfigError};
use crate::evaluation::{
    evaluate_responses, factscore_responses, summarize_metrics, EvidenceIndex, FactScoreOutput, FactSummary,
    MetricOutput, MetricSummary,
};
use crate::formats::{self, FormatError};
use crate::gateway::{Gateway, MockBackend, MockScript};
use crate::mock_server::MockServer;
use crate::pipeline::{self, map_ordered, ItemError, PipelineVariant, RunConfig, RunError, Stage};
use crate::scoring::{select_for_dialogue, ScorerKind};

pub const REFORMULATIONS: &str = "reformulations.jsonl";
pub const SCORED: &str = "scored.jsonl";
pub const SENSE_GRAPHS: &str = "sense_graphs.jsonl";
pub const PCST_GRAPHS: &str = "pcst_graphs.jsonl";
pub const RESPONSES: &str = "responses.jsonl";
pub const FACTSCORE: &str = "factscore.jsonl";
pub const FACTSCORE_SUMMARY: &str = "factscore_summary.json";
pub const METRICS: &str = "metrics.jsonl";
pub const METRICS_SUMMARY: &str = "metrics_summary.json";

static CANCEL: AtomicBool = AtomicBool::new(false);

#[derive(Parser, Debug)]
#[command(name = "factdial", version, about = "Knowledge-grounded dialogue generation and fact scoring")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default)]
pub struct GlobalOpts {
    /// JSON config file; flags override its fields
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for retry jitter
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub base_url: Option<String>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    #[arg(long, global = true)]
    pub max_retries: Option<u32>,
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    pub snapshot: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Pipeline variant: nr or r
    #[arg(long, global = true)]
    pub variant: Option<PipelineVariant>,
    /// Number of triples kept by Top-N selection
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Triple scorer: bm25, embedding or llm_judge
    #[arg(long, global = true)]
    pub scorer: Option<ScorerKind>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Resolve pronouns and references in every corpus dialogue
    Reformulate {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score triple pools and write Top-N sense graphs
    Select {
        /// Reformulations to select on (variant r)
        #[arg(long)]
        reformulated: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where to write every scored triple
        #[arg(long)]
        scored_out: Option<PathBuf>,
    },
    /// Build PCST sense graphs from a scored-triple export
    Subgraph {
        #[arg(long)]
        scored: Option<PathBuf>,
        /// Number of prized triples
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate one response per dialogue from its sense graph
    Generate {
        #[arg(long)]
        graphs: Option<PathBuf>,
        #[arg(long)]
        reformulated: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Atomic fact verification of a response file
    Factscore {
        #[arg(long)]
        responses: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// BLEU-4, ROUGE-L, entity F1 and perplexity of a response file
    Evaluate {
        #[arg(long)]
        responses: Option<PathBuf>,
        /// Also score perplexity through the gateway
        #[arg(long)]
        ppl: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Raw agreement and Cohen's kappa between two label files
    Agreement { a: PathBuf, b: PathBuf },
    /// Reformulate, select, generate, factscore and evaluate in one go
    RunAll,
    /// Serve the scripted mock backend on loopback
    MockServe {
        #[arg(long, default_value_t = 8089)]
        port: u16,
        #[arg(long)]
        mock_script: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        threads: usize,
    },
}

#[derive(Debug)]
enum Failure {
    Fatal(String),
    Interrupted,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Fatal(e.to_string())
    }
}

impl From<FormatError> for Failure {
    fn from(e: FormatError) -> Self {
        Failure::Fatal(e.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Failure::Fatal(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Fatal(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

/// Parses `args` and runs the chosen subcommand, returning the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("FACTDIAL_LOG", "warn"))
        .format_timestamp(None)
        .try_init();
    let _ = ctrlc::set_handler(|| CANCEL.store(true, Ordering::SeqCst));

    match dispatch(cli) {
        Ok(()) => 0,
        Err(Failure::Fatal(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Interrupted) => {
            eprintln!("warning: interrupted, partial outputs were written");
            130
        }
    }
}

fn app_config(g: &GlobalOpts) -> CliResult<AppConfig> {
    let mut cfg = AppConfig::load_or_default(g.config.as_deref())?;
    if let Some(s) = g.seed {
        cfg.gateway.seed = s;
    }
    if let Some(u) = &g.base_url {
        cfg.gateway.base_url = u.clone();
    }
    if let Some(m) = &g.model {
        cfg.gateway.model = m.clone();
    }
    if let Some(p) = g.parallelism {
        cfg.gateway.parallelism = p;
    }
    if let Some(r) = g.max_retries {
        cfg.gateway.max_retries = r;
    }
    if let Some(p) = &g.corpus {
        cfg.paths.corpus = Some(p.clone());
    }
    if let Some(p) = &g.snapshot {
        cfg.paths.snapshot = Some(p.clone());
    }
    if let Some(p) = &g.out_dir {
        cfg.paths.out_dir = p.clone();
    }
    if let Some(v) = g.variant {
        cfg.variant = v;
    }
    if let Some(n) = g.n {
        cfg.selection.n = n;
    }
    if let Some(s) = g.scorer {
        cfg.selection.scorer = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: Cli) -> CliResult {
    if let Command::MockServe { port, mock_script, threads } = &cli.command {
        return mock_serve(*port, mock_script.as_deref(), *threads);
    }
    if let Command::Agreement { a, b } = &cli.command {
        return agreement(a, b);
    }
    let cfg = app_config(&cli.global)?;
    match cli.command {
        Command::Reformulate { out } => reformulate(&cfg, out),
        Command::Select { reformulated, out, scored_out } => select(&cfg, reformulated, out, scored_out),
        Command::Subgraph { scored, k, out } => subgraph(&cfg, scored, k, out),
        Command::Generate { graphs, reformulated, out } => generate(&cfg, graphs, reformulated, out),
        Command::Factscore { responses, out, summary } => factscore(&cfg, responses, out, summary),
        Command::Evaluate { responses, ppl, out, summary } => evaluate(&cfg, responses, ppl, out, summary),
        Command::RunAll => run_all(&cfg),
        Command::Agreement { .. } | Command::MockServe { .. } => unreachable!("handled above"),
    }
}

fn out_path(cfg: &AppConfig, given: Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    let p = given.unwrap_or_else(|| cfg.out_file(name));
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Fatal(format!("cannot create {}: {e}", dir.display())))?;
    }
    Ok(p)
}

fn in_path(cfg: &AppConfig, given: Option<PathBuf>, name: &str, role: &'static str) -> CliResult<PathBuf> {
    let p = given.unwrap_or_else(|| cfg.out_file(name));
    existing(role, &p)?;
    Ok(p)
}

fn load_corpus(cfg: &AppConfig) -> CliResult<Vec<Dialogue>> {
    let corpus = formats::load_corpus(cfg.corpus()?)?;
    if corpus.is_empty() {
        return Err(RunError::EmptyCorpus.into());
    }
    Ok(corpus)
}

fn gateway(cfg: &AppConfig) -> CliResult<Gateway> {
    let gw = Gateway::http(cfg.gateway.clone());
    gw.probe().map_err(|source| RunError::FatalConfig { url: cfg.gateway.base_url.clone(), source })?;
    Ok(gw)
}

/// Logs a one-line summary of per-item failures and turns a raised cancel
/// flag into an interrupt once outputs are on disk.
fn finish(stage: &str, errors: &[ItemError]) -> CliResult {
    if !errors.is_empty() {
        eprintln!("warning: {stage}: {} item(s) failed", errors.len());
        for e in errors {
            eprintln!("  {e}");
        }
    }
    if CANCEL.load(Ordering::SeqCst) {
        return Err(Failure::Interrupted);
    }
    Ok(())
}

fn split<R>(results: Vec<Result<R, ItemError>>) -> (Vec<R>, Vec<ItemError>) {
    let mut ok = Vec::new();
    let mut errs = Vec::new();
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => errs.push(e),
        }
    }
    (ok, errs)
}

fn reformulate(cfg: &AppConfig, out: Option<PathBuf>) -> CliResult {
    let corpus = load_corpus(cfg)?;
    let gw = gateway(cfg)?;
    let results = map_ordered(
        &corpus,
        cfg.gateway.parallelism,
        &CANCEL,
        |d| d.id.clone(),
        |d| pipeline::reformulate(&gw, d).map_err(|e| ItemError::new(&d.id, Stage::Reformulate, e)),
    )?;
    let (items, errors) = split(results);
    formats::write_reformulations(&out_path(cfg, out, REFORMULATIONS)?, &items)?;
    finish("reformulate", &errors)
}

/// The dialogues a variant works on: the corpus itself, or its
/// reformulations for variant r.
fn working_dialogues(cfg: &AppConfig, corpus: &[Dialogue], reformulated: Option<PathBuf>) -> CliResult<Vec<Dialogue>> {
    match cfg.variant {
        PipelineVariant::Nr => Ok(corpus.to_vec()),
        PipelineVariant::R => {
            let p = in_path(cfg, reformulated, REFORMULATIONS, "reformulation")?;
            let items = formats::load_reformulations(&p, corpus)?;
            Ok(items.iter().map(ReformulatedDialogue::as_dialogue).collect())
        }
    }
}

fn scored_export(id: &str, cfg: &AppConfig, mut scored: Vec<factdial_core::ScoredTriple>) -> DialogueSenseGraph {
    scored.sort_by_key(|s| s.source_index);
    DialogueSenseGraph {
        dialogue_id: id.into(),
        variant: cfg.variant.graph_variant(),
        n: scored.len(),
        triples: scored,
    }
}

fn select(
    cfg: &AppConfig,
    reformulated: Option<PathBuf>,
    out: Option<PathBuf>,
    scored_out: Option<PathBuf>,
) -> CliResult {
    let corpus = load_corpus(cfg)?;
    let working = working_dialogues(cfg, &corpus, reformulated)?;
    let gw = match cfg.selection.scorer {
        ScorerKind::Bm25 => None,
        _ => Some(gateway(cfg)?),
    };
    let results = map_ordered(
        &working,
        cfg.gateway.parallelism,
        &CANCEL,
        |d| d.id.clone(),
        |d| {
            select_for_dialogue(gw.as_ref(), &cfg.selection, d, cfg.variant.graph_variant())
                .map_err(|e| ItemError::new(&d.id, Stage::Select, e))
                .map(|(scored, graph)| (scored_export(&d.id, cfg, scored), graph))
        },
    )?;
    let (items, errors) = split(results);
    let (scored, graphs): (Vec<_>, Vec<_>) = items.into_iter().unzip();
    formats::write_sense_graphs(&out_path(cfg, out, SENSE_GRAPHS)?, &graphs)?;
    formats::write_sense_graphs(&out_path(cfg, scored_out, SCORED)?, &scored)?;
    finish("select", &errors)
}

fn subgraph(cfg: &AppConfig, scored: Option<PathBuf>, k: Option<usize>, out: Option<PathBuf>) -> CliResult {
    let scored = formats::load_sense_graphs(&in_path(cfg, scored, SCORED, "scored triple")?)?;
    let k = k.unwrap_or(cfg.selection.n);
    let graphs: Vec<DialogueSenseGraph> =
        scored.iter().map(|g| pcst_sense_graph(&g.dialogue_id, g.variant, &g.triples, k)).collect();
    formats::write_sense_graphs(&out_path(cfg, out, PCST_GRAPHS)?, &graphs)?;
    Ok(())
}

fn generate(
    cfg: &AppConfig,
    graphs: Option<PathBuf>,
    reformulated: Option<PathBuf>,
    out: Option<PathBuf>,
) -> CliResult {
    let corpus = load_corpus(cfg)?;
    let working = working_dialogues(cfg, &corpus, reformulated)?;
    let graphs = formats::load_sense_graphs(&in_path(cfg, graphs, SENSE_GRAPHS, "sense graph")?)?;
    let by_id: HashMap<&str, &DialogueSenseGraph> = graphs.iter().map(|g| (g.dialogue_id.as_str(), g)).collect();
    let gw = gateway(cfg)?;
    let method = cfg.variant.method_tag();
    let results = map_ordered(
        &working,
        cfg.gateway.parallelism,
        &CANCEL,
        |d| d.id.clone(),
        |d| {
            let graph =
                by_id.get(d.id.as_str()).ok_or_else(|| ItemError::new(&d.id, Stage::Generate, "no sense graph"))?;
            pipeline::generate_response(&gw, d, graph, method).map_err(|e| ItemError::new(&d.id, Stage::Generate, e))
        },
    )?;
    let (responses, errors) = split(results);
    formats::write_responses(&out_path(cfg, out, RESPONSES)?, &responses)?;
    finish("generate", &errors)
}

fn load_snapshot(cfg: &AppConfig) -> CliResult<KnowledgeSnapshot> {
    Ok(formats::load_snapshot(cfg.snapshot()?)?)
}

fn print_json<T: Serialize>(value: &T) -> CliResult {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Failure::Fatal(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

fn write_factscore(
    cfg: &AppConfig,
    out: &FactScoreOutput,
    reports: Option<PathBuf>,
    summary: Option<PathBuf>,
) -> CliResult<FactSummary> {
    formats::write_jsonl(&out_path(cfg, reports, FACTSCORE)?, &out.reports)?;
    let s = out.summary();
    formats::write_json(&out_path(cfg, summary, FACTSCORE_SUMMARY)?, &s)?;
    Ok(s)
}

fn write_metrics(
    cfg: &AppConfig,
    out: &MetricOutput,
    rows: Option<PathBuf>,
    summary: Option<PathBuf>,
) -> CliResult<MetricSummary> {
    formats::write_jsonl(&out_path(cfg, rows, METRICS)?, &out.rows)?;
    let s = summarize_metrics(&out.rows);
    formats::write_json(&out_path(cfg, summary, METRICS_SUMMARY)?, &s)?;
    Ok(s)
}

fn factscore(cfg: &AppConfig, responses: Option<PathBuf>, out: Option<PathBuf>, summary: Option<PathBuf>) -> CliResult {
    let responses = formats::load_responses(&in_path(cfg, responses, RESPONSES, "response")?)?;
    let corpus = load_corpus(cfg)?;
    let index = EvidenceIndex::new(load_snapshot(cfg)?, &corpus);
    let gw = gateway(cfg)?;
    let result = factscore_responses(&gw, &index, &responses, &corpus, &CANCEL)?;
    let s = write_factscore(cfg, &result, out, summary)?;
    print_json(&s)?;
    finish("factscore", &result.errors)
}

fn metric_linker(cfg: &AppConfig, corpus: &[Dialogue]) -> CliResult<AliasLinker> {
    let snapshot = match cfg.paths.snapshot {
        Some(_) => load_snapshot(cfg)?,
        None => KnowledgeSnapshot::new(),
    };
    Ok(EvidenceIndex::new(snapshot, corpus).linker)
}

fn evaluate(
    cfg: &AppConfig,
    responses: Option<PathBuf>,
    ppl: bool,
    out: Option<PathBuf>,
    summary: Option<PathBuf>,
) -> CliResult {
    let responses = formats::load_responses(&in_path(cfg, responses, RESPONSES, "response")?)?;
    let corpus = load_corpus(cfg)?;
    let linker = metric_linker(cfg, &corpus)?;
    let gw = if ppl || cfg.evaluate.ppl { Some(gateway(cfg)?) } else { None };
    let result = evaluate_responses(&linker, gw.as_ref(), &responses, &corpus, &CANCEL)?;
    let s = write_metrics(cfg, &result, out, summary)?;
    print_json(&s)?;
    finish("evaluate", &result.errors)
}

#[derive(Serialize)]
struct RunAllSummary {
    responses: usize,
    factscore: FactSummary,
    metrics: MetricSummary,
}

fn run_all(cfg: &AppConfig) -> CliResult {
    let corpus = load_corpus(cfg)?;
    let snapshot = load_snapshot(cfg)?;
    let gw = gateway(cfg)?;
    let run_cfg = RunConfig { variant: cfg.variant, selection: cfg.selection.clone() };
    let run = pipeline::run(&gw, &corpus, &run_cfg, &CANCEL)?;
    if cfg.variant == PipelineVariant::R {
        formats::write_reformulations(&out_path(cfg, None, REFORMULATIONS)?, &run.reformulations())?;
    }
    let scored: Vec<DialogueSenseGraph> =
        run.outcomes.iter().map(|o| scored_export(&o.graph.dialogue_id, cfg, o.scored.clone())).collect();
    formats::write_sense_graphs(&out_path(cfg, None, SCORED)?, &scored)?;
    formats::write_sense_graphs(&out_path(cfg, None, SENSE_GRAPHS)?, &run.graphs())?;
    let responses: Vec<Response> = run.responses();
    formats::write_responses(&out_path(cfg, None, RESPONSES)?, &responses)?;
    finish("generation", &run.errors)?;

    let index = EvidenceIndex::new(snapshot, &corpus);
    let facts = factscore_responses(&gw, &index, &responses, &corpus, &CANCEL)?;
    let fact_summary = write_factscore(cfg, &facts, None, None)?;
    finish("factscore", &facts.errors)?;

    let ppl_gw = cfg.evaluate.ppl.then_some(&gw);
    let metrics = evaluate_responses(&index.linker, ppl_gw, &responses, &corpus, &CANCEL)?;
    let metric_summary = write_metrics(cfg, &metrics, None, None)?;
    print_json(&RunAllSummary { responses: responses.len(), factscore: fact_summary, metrics: metric_summary })?;
    finish("evaluate", &metrics.errors)
}

fn read_labels(path: &Path) -> CliResult<Vec<String>> {
    let text = std::fs::read_to_string(existing("label", path)?)
        .map_err(|e| Failure::Fatal(format!("cannot read {}: {e}", path.display())))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

#[derive(Serialize)]
struct AgreementReport {
    n: usize,
    raw: f64,
    kappa: f64,
}

fn agreement(a: &Path, b: &Path) -> CliResult {
    let pair = LabelPair::new(read_labels(a)?, read_labels(b)?)
        .map_err(|e| Failure::Fatal(format!("{} vs {}: {e}", a.display(), b.display())))?;
    print_json(&AgreementReport { n: pair.len(), raw: raw_agreement(&pair), kappa: cohen_kappa(&pair) })
}

fn mock_serve(port: u16, script: Option<&Path>, threads: usize) -> CliResult {
    let script = match script {
        Some(p) => MockScript::load(existing("mock script", p)?).map_err(Failure::Fatal)?,
        None => MockScript::default(),
    };
    let server = MockServer::start(port, Arc::new(MockBackend::new(script)), threads)
        .map_err(|e| Failure::Fatal(format!("cannot bind 127.0.0.1:{port}: {e}")))?;
    {
        let mut out = std::io::stdout().lock();
        writeln!(out, "{}", server.base_url())?;
        out.flush()?;
    }
    log::info!("mock backend listening on {}", server.base_url());
    while !CANCEL.load(Ordering::SeqCst) {
        std::thread::sleep(Duration::from_millis(50));
    }
    server.shutdown();
    Ok(())
}
