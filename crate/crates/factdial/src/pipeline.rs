//! Reformulation, selection and textualized-graph generation over a corpus.

use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};

use factdial_core::model::{Dialogue, DialogueSenseGraph, Response, ScoredTriple, Variant};
use factdial_core::reformulation::{parse_reformulation, ReformulatedDialogue};
use factdial_core::text::{render_turns, textualize_graph};
use factdial_core::TemplateName;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError};
use crate::scoring::{select_for_dialogue, ScoreError, SelectionConfig};

/// `Nr` generates from the original dialogue; `R` reformulates first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineVariant {
    Nr,
    #[default]
    R,
}

impl PipelineVariant {
    pub fn method_tag(self) -> &'static str {
        match self {
            PipelineVariant::Nr => "tg-drg-nr",
            PipelineVariant::R => "tg-drg-r",
        }
    }

    pub fn graph_variant(self) -> Variant {
        match self {
            PipelineVariant::Nr => Variant::Original,
            PipelineVariant::R => Variant::Reformulated,
        }
    }
}

impl std::str::FromStr for PipelineVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "nr" | "tg-drg-nr" => Ok(PipelineVariant::Nr),
            "r" | "tg-drg-r" => Ok(PipelineVariant::R),
            other => Err(format!("unknown variant {other} (expected nr or r)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub variant: PipelineVariant,
    pub selection: SelectionConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Reformulate,
    Select,
    Generate,
    Factscore,
    Evaluate,
    Cancelled,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Reformulate => "reformulate",
            Stage::Select => "select",
            Stage::Generate => "generate",
            Stage::Factscore => "factscore",
            Stage::Evaluate => "evaluate",
            Stage::Cancelled => "cancelled",
        };
        f.write_str(s)
    }
}

/// A failure confined to one dialogue; the run carries on without it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemError {
    pub dialogue_id: String,
    pub stage: Stage,
    pub message: String,
}

impl ItemError {
    pub fn new(dialogue_id: &str, stage: Stage, message: impl fmt::Display) -> Self {
        ItemError { dialogue_id: dialogue_id.into(), stage, message: message.to_string() }
    }
}

impl fmt::Display for ItemError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]: {}", self.dialogue_id, self.stage, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("gateway unreachable at {url}: {source}")]
    FatalConfig { url: String, source: GatewayError },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Resolves pronouns and references. An unparseable reply falls back to the
/// original turns rather than failing.
pub fn reformulate(gw: &Gateway, d: &Dialogue) -> Result<ReformulatedDialogue, GatewayError> {
    let prompt = TemplateName::Reformulate
        .template()
        .render(&[("Dialogue", &render_turns(&d.turns))])
        .expect("reformulate bindings are complete");
    let reply = gw.complete(&prompt, Some(&d.id))?;
    let r = parse_reformulation(d, &reply);
    if r.fallback_used {
        log::warn!("{}: reformulation reply did not parse, using the original dialogue", d.id);
    }
    Ok(r)
}

/// Renders the generation prompt: the textualized graph as knowledge, every
/// turn but the last as context and the last turn as input.
pub fn generation_prompt(d: &Dialogue, graph: &DialogueSenseGraph) -> String {
    let (last, context) = d.turns.split_last().expect("validated dialogue has turns");
    TemplateName::Generate
        .template()
        .render(&[
            ("Selected Triples", &textualize_graph(graph)),
            ("Dialogue Context", &render_turns(context)),
            ("Last Utterance", &last.text),
        ])
        .expect("generate bindings are complete")
}

pub fn generate_response(
    gw: &Gateway,
    d: &Dialogue,
    graph: &DialogueSenseGraph,
    method: &str,
) -> Result<Response, GatewayError> {
    if graph.dialogue_id != d.id {
        return Err(GatewayError::Precondition("sense graph belongs to another dialogue"));
    }
    let text = gw.complete(&generation_prompt(d, graph), Some(&d.id))?;
    Ok(Response { dialogue_id: d.id.clone(), method: method.into(), text })
}

/// Everything produced for one dialogue.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogueOutcome {
    pub reformulation: Option<ReformulatedDialogue>,
    pub scored: Vec<ScoredTriple>,
    pub graph: DialogueSenseGraph,
    pub response: Response,
}

fn score_error(id: &str, e: ScoreError) -> ItemError {
    ItemError::new(id, Stage::Select, e)
}

/// Reformulate (variant R) → select → generate, strictly in sequence.
pub fn process_dialogue(gw: &Gateway, d: &Dialogue, cfg: &RunConfig) -> Result<DialogueOutcome, ItemError> {
    let reformulation = match cfg.variant {
        PipelineVariant::Nr => None,
        PipelineVariant::R => Some(reformulate(gw, d).map_err(|e| ItemError::new(&d.id, Stage::Reformulate, e))?),
    };
    let working = reformulation.as_ref().map_or_else(|| d.clone(), ReformulatedDialogue::as_dialogue);
    let (scored, graph) = select_for_dialogue(Some(gw), &cfg.selection, &working, cfg.variant.graph_variant())
        .map_err(|e| score_error(&d.id, e))?;
    let response = generate_response(gw, &working, &graph, cfg.variant.method_tag())
        .map_err(|e| ItemError::new(&d.id, Stage::Generate, e))?;
    Ok(DialogueOutcome { reformulation, scored, graph, response })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    /// Successful dialogues, in corpus order.
    pub outcomes: Vec<DialogueOutcome>,
    pub errors: Vec<ItemError>,
}

impl RunOutput {
    pub fn responses(&self) -> Vec<Response> {
        self.outcomes.iter().map(|o| o.response.clone()).collect()
    }

    pub fn graphs(&self) -> Vec<DialogueSenseGraph> {
        self.outcomes.iter().map(|o| o.graph.clone()).collect()
    }

    pub fn reformulations(&self) -> Vec<ReformulatedDialogue> {
        self.outcomes.iter().filter_map(|o| o.reformulation.clone()).collect()
    }

    pub fn cancelled(&self) -> usize {
        self.errors.iter().filter(|e| e.stage == Stage::Cancelled).count()
    }
}

/// Maps `f` over `items` on a pool of `parallelism` threads, keeping input
/// order. Items seen after `cancel` is raised are reported as cancelled.
pub fn map_ordered<T, R, F>(
    items: &[T],
    parallelism: usize,
    cancel: &AtomicBool,
    id_of: impl Fn(&T) -> String + Sync,
    f: F,
) -> Result<Vec<Result<R, ItemError>>, RunError>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R, ItemError> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    Ok(pool.install(|| {
        items
            .par_iter()
            .map(|item| {
                if cancel.load(Ordering::SeqCst) {
                    return Err(ItemError::new(&id_of(item), Stage::Cancelled, "interrupted before start"));
                }
                f(item)
            })
            .collect()
    }))
}

/// Probes the gateway once, then processes every dialogue. Per-dialogue
/// failures are collected in [`RunOutput::errors`].
pub fn run(gw: &Gateway, corpus: &[Dialogue], cfg: &RunConfig, cancel: &AtomicBool) -> Result<RunOutput, RunError> {
    if corpus.is_empty() {
        return Err(RunError::EmptyCorpus);
    }
    gw.probe().map_err(|source| RunError::FatalConfig { url: gw.config().base_url.clone(), source })?;
    let results =
        map_ordered(corpus, gw.config().parallelism, cancel, |d| d.id.clone(), |d| process_dialogue(gw, d, cfg))?;
    let mut out = RunOutput::default();
    for r in results {
        match r {
            Ok(o) => out.outcomes.push(o),
            Err(e) => {
                log::warn!("{e}");
                out.errors.push(e);
            }
        }
    }
    Ok(out)
}
