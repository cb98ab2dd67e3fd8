//! Dialogue fact scoring and conventional metrics over response files.
//!
//! Evaluation always sees the original corpus dialogue, never a system's own
//! reformulation.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::AtomicBool;

use factdial_core::factscore::{
    corpus_fact, order_free_mean, parse_atomic_facts, parse_verdict, percent, retrieve_evidence, to_atomic_facts,
    CorpusFact, FactScoreError,
};
use factdial_core::metrics::{bleu4, entity_f1, perplexity, rouge_l};
use factdial_core::model::{Dialogue, Response};
use factdial_core::text::{dialogue_text, render_turns};
use factdial_core::{AliasLinker, AtomicFact, FactReport, KnowledgeSnapshot, Label, TemplateName, Verdict};
use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError};
use crate::pipeline::{map_ordered, ItemError, RunError, Stage};

/// Splits a response into atomic facts. Returns the facts and whether the
/// whole-response fallback was used.
pub fn split_atomic(
    gw: &Gateway,
    response_id: &str,
    response_text: &str,
) -> Result<(Vec<AtomicFact>, bool), GatewayError> {
    if response_text.trim().is_empty() {
        return Err(GatewayError::Precondition("response text must be non-empty"));
    }
    let prompt = TemplateName::AtomicSplit
        .template()
        .render(&[("Response", response_text)])
        .expect("atomic split bindings are complete");
    let reply = gw.complete(&prompt, Some(response_id))?;
    let (facts, fallback) = parse_atomic_facts(response_text, &reply);
    if fallback {
        log::warn!("{response_id}: empty atomic split, scoring the whole response as one fact");
    }
    Ok((to_atomic_facts(response_id, facts), fallback))
}

/// Three-way verification of one fact against evidence and dialogue history.
/// An unrecognized reply counts as NotEnoughInfo; the flag reports it.
pub fn verify(
    gw: &Gateway,
    fact: &AtomicFact,
    evidence: &str,
    dialogue: &Dialogue,
    evidence_titles: Vec<String>,
) -> Result<(Verdict, bool), GatewayError> {
    let history = render_turns(&dialogue.turns);
    let prompt = TemplateName::Verify
        .template()
        .render(&[
            ("Wikipedia Passages", evidence),
            ("Dialogue", &history),
            ("Speaker", dialogue.responder().label()),
            ("Atomic Fact", &fact.text),
        ])
        .expect("verify bindings are complete");
    let reply = gw.complete(&prompt, Some(&fact.response_id))?;
    let (label, unrecognized) = match parse_verdict(&reply) {
        Some(l) => (l, false),
        None => {
            log::warn!("{} fact {}: unrecognized verdict {reply:?}", fact.response_id, fact.index);
            (Label::NotEnoughInfo, true)
        }
    };
    Ok((Verdict { fact: fact.clone(), label, evidence_titles }, unrecognized))
}

/// Snapshot plus linker built from snapshot titles and corpus node labels.
pub struct EvidenceIndex {
    pub snapshot: KnowledgeSnapshot,
    pub linker: AliasLinker,
}

impl EvidenceIndex {
    pub fn new(snapshot: KnowledgeSnapshot, corpus: &[Dialogue]) -> Self {
        let labels: Vec<&str> = corpus
            .iter()
            .flat_map(|d| d.triples.iter().flat_map(|t| [t.subject.as_str(), t.object.as_str()]))
            .collect();
        let linker = AliasLinker::build(snapshot.titles(), labels);
        EvidenceIndex { snapshot, linker }
    }

    /// Titles linked from the fact, then from the dialogue, that have a passage.
    pub fn titles_for(&self, fact: &str, dialogue: &Dialogue) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.linker
            .link(fact)
            .into_iter()
            .chain(self.linker.link(&dialogue_text(&dialogue.turns)))
            .filter(|t| self.snapshot.get(t).is_some() && seen.insert(t.clone()))
            .collect()
    }
}

pub fn score_response(
    gw: &Gateway,
    index: &EvidenceIndex,
    response: &Response,
    dialogue: &Dialogue,
) -> Result<FactReport, ItemError> {
    let err = |e: &dyn std::fmt::Display| ItemError::new(&response.dialogue_id, Stage::Factscore, e);
    let (facts, _) = split_atomic(gw, &response.dialogue_id, &response.text).map_err(|e| err(&e))?;
    let mut verdicts = Vec::with_capacity(facts.len());
    for fact in &facts {
        let titles = index.titles_for(&fact.text, dialogue);
        let evidence = retrieve_evidence(&index.snapshot, &titles);
        let (verdict, _) = verify(gw, fact, &evidence, dialogue, titles).map_err(|e| err(&e))?;
        verdicts.push(verdict);
    }
    FactReport::new(&response.dialogue_id, verdicts).map_err(|e| err(&e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactSummary {
    pub fact: Option<f64>,
    pub neip: Option<f64>,
    pub n_responses: usize,
    pub n_facts: usize,
    pub n_errors: usize,
}

#[derive(Debug, Default)]
pub struct FactScoreOutput {
    pub reports: Vec<FactReport>,
    pub errors: Vec<ItemError>,
}

impl FactScoreOutput {
    pub fn summary(&self) -> FactSummary {
        let corpus: Result<CorpusFact, FactScoreError> = corpus_fact(&self.reports);
        let neip: Vec<f64> = self.reports.iter().map(|r| r.neip).collect();
        let neip = order_free_mean(&neip).map(percent);
        FactSummary {
            fact: corpus.ok().map(|c| c.fact),
            neip,
            n_responses: self.reports.len(),
            n_facts: self.reports.iter().map(|r| r.verdicts.len()).sum(),
            n_errors: self.errors.len(),
        }
    }
}

fn lookup<'a>(corpus: &'a HashMap<&str, &Dialogue>, r: &Response, stage: Stage) -> Result<&'a Dialogue, ItemError> {
    corpus
        .get(r.dialogue_id.as_str())
        .copied()
        .ok_or_else(|| ItemError::new(&r.dialogue_id, stage, "response refers to no corpus dialogue"))
}

pub fn factscore_responses(
    gw: &Gateway,
    index: &EvidenceIndex,
    responses: &[Response],
    corpus: &[Dialogue],
    cancel: &AtomicBool,
) -> Result<FactScoreOutput, RunError> {
    let by_id: HashMap<&str, &Dialogue> = corpus.iter().map(|d| (d.id.as_str(), d)).collect();
    let results = map_ordered(
        responses,
        gw.config().parallelism,
        cancel,
        |r| r.dialogue_id.clone(),
        |r| score_response(gw, index, r, lookup(&by_id, r, Stage::Factscore)?),
    )?;
    let mut out = FactScoreOutput::default();
    for r in results {
        match r {
            Ok(rep) => out.reports.push(rep),
            Err(e) => {
                log::warn!("{e}");
                out.errors.push(e);
            }
        }
    }
    Ok(out)
}

/// Reference-based metrics for one response; `None` where undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub response_id: String,
    pub bleu4: Option<f64>,
    pub rouge_l: Option<f64>,
    pub entity_f1: Option<f64>,
    pub ppl: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub n_responses: usize,
    pub bleu4: Option<f64>,
    pub rouge_l: Option<f64>,
    pub entity_f1: Option<f64>,
    pub ppl: Option<f64>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    order_free_mean(&v)
}

pub fn summarize_metrics(rows: &[MetricRow]) -> MetricSummary {
    MetricSummary {
        n_responses: rows.len(),
        bleu4: mean(rows.iter().map(|r| r.bleu4)),
        rouge_l: mean(rows.iter().map(|r| r.rouge_l)),
        entity_f1: mean(rows.iter().map(|r| r.entity_f1)),
        ppl: mean(rows.iter().map(|r| r.ppl)),
    }
}

/// `exp(−mean logprob)` from the gateway's per-token log probabilities.
pub fn response_perplexity(gw: &Gateway, text: &str) -> Result<f64, GatewayError> {
    let lp: Vec<f64> = gw.logprobs(text)?.into_iter().map(|t| t.logprob).collect();
    perplexity(&lp).ok_or_else(|| GatewayError::MalformedResponse("no scored tokens".into()))
}

pub fn metric_row(
    linker: &AliasLinker,
    ppl_gateway: Option<&Gateway>,
    response: &Response,
    dialogue: &Dialogue,
) -> MetricRow {
    let reference = dialogue.reference.as_deref();
    let ppl = match ppl_gateway {
        Some(gw) if !response.text.trim().is_empty() => match response_perplexity(gw, &response.text) {
            Ok(p) => Some(p),
            Err(e) => {
                log::warn!("{}: perplexity unavailable ({e})", response.dialogue_id);
                None
            }
        },
        _ => None,
    };
    MetricRow {
        response_id: response.dialogue_id.clone(),
        bleu4: reference.map(|r| bleu4(&response.text, r)),
        rouge_l: reference.map(|r| rouge_l(&response.text, r)),
        entity_f1: reference.map(|r| entity_f1(linker, &response.text, r)),
        ppl,
    }
}

#[derive(Debug, Default)]
pub struct MetricOutput {
    pub rows: Vec<MetricRow>,
    pub errors: Vec<ItemError>,
}

pub fn evaluate_responses(
    linker: &AliasLinker,
    ppl_gateway: Option<&Gateway>,
    responses: &[Response],
    corpus: &[Dialogue],
    cancel: &AtomicBool,
) -> Result<MetricOutput, RunError> {
    let by_id: HashMap<&str, &Dialogue> = corpus.iter().map(|d| (d.id.as_str(), d)).collect();
    let parallelism = ppl_gateway.map_or(1, |g| g.config().parallelism);
    let results = map_ordered(
        responses,
        parallelism,
        cancel,
        |r| r.dialogue_id.clone(),
        |r| Ok(metric_row(linker, ppl_gateway, r, lookup(&by_id, r, Stage::Evaluate)?)),
    )?;
    let mut out = MetricOutput::default();
    for r in results {
        match r {
            Ok(row) => out.rows.push(row),
            Err(e) => out.errors.push(e),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{GatewayConfig, MockBackend, MockRule, MockScript};
    use factdial_core::{Speaker, Utterance};
    use std::sync::Arc;

    fn gateway(rules: Vec<MockRule>) -> (Gateway, Arc<MockBackend>) {
        let mock = Arc::new(MockBackend::new(MockScript { rules, ..MockScript::default() }));
        (Gateway::new(GatewayConfig::default(), mock.clone()), mock)
    }

    fn verify_rule(reply: &str) -> MockRule {
        MockRule { template: Some(TemplateName::Verify), reply: Some(reply.into()), ..MockRule::default() }
    }

    fn dialogue(turns: &[&str]) -> Dialogue {
        Dialogue {
            id: "d".into(),
            turns: turns
                .iter()
                .enumerate()
                .map(|(i, t)| Utterance::new(if i % 2 == 0 { Speaker::A } else { Speaker::B }, *t).unwrap())
                .collect(),
            reference: Some("Dorothy Wall wrote Blinky Bill.".into()),
            triples: vec![],
        }
    }

    fn fact(text: &str) -> AtomicFact {
        AtomicFact { response_id: "d".into(), index: 0, text: text.into() }
    }

    #[test]
    fn split_variants() {
        let (gw, _) = gateway(vec![MockRule {
            template: Some(TemplateName::AtomicSplit),
            contains: Some("Dot".into()),
            reply: Some("Hayden Panettiere voiced a character in A Bug's Life.\nThat character is Dot.".into()),
            ..MockRule::default()
        }]);
        let (facts, fb) =
            split_atomic(&gw, "d", "Hayden Panettiere voiced the character Dot in A Bug's Life.").unwrap();
        assert_eq!((facts.len(), fb), (2, false));
        assert_eq!(facts[1].index, 1);
        let (facts, _) = split_atomic(&gw, "d", "Montevideo, population, 309331").unwrap();
        assert_eq!(facts[0].text, "Montevideo, population, 309331");
        assert!(split_atomic(&gw, "d", "  ").is_err());

        let (blank, _) = gateway(vec![MockRule {
            template: Some(TemplateName::AtomicSplit),
            reply: Some("".into()),
            ..MockRule::default()
        }]);
        let (facts, fb) = split_atomic(&blank, "d", "Whole response.").unwrap();
        assert_eq!((facts[0].text.as_str(), fb), ("Whole response.", true));
    }

    #[test]
    fn verdict_mapping() {
        let d = dialogue(&["Who wrote Blinky Bill?"]);
        for (reply, label, warned) in [
            ("true", Label::True, false),
            ("no enough information.", Label::NotEnoughInfo, false),
            ("I think so", Label::NotEnoughInfo, true),
            ("False", Label::False, false),
        ] {
            let (gw, _) = gateway(vec![verify_rule(reply)]);
            let (v, w) = verify(&gw, &fact("x"), "", &d, vec![]).unwrap();
            assert_eq!((v.label, w), (label, warned), "{reply}");
        }
    }

    #[test]
    fn verify_prompt_carries_only_evidence_and_history() {
        let (gw, mock) = gateway(vec![]);
        let d = dialogue(&["Who wrote Blinky Bill?"]);
        let (v, _) = verify(&gw, &fact("Dorothy Wall wrote it."), "Title: Blinky Bill\nA koala.", &d, vec![]).unwrap();
        assert_eq!(v.label, Label::NotEnoughInfo);
        let p = &mock.calls()[0].prompt;
        assert!(p.contains("Evidence: Title: Blinky Bill\nA koala.\nDialogue history: Speaker A: Who wrote Blinky Bill?\nSpeaker A: Speaker B\nStatement: Dorothy Wall wrote it."));
    }

    #[test]
    fn evidence_titles_union_fact_and_dialogue() {
        let mut snap = KnowledgeSnapshot::new();
        snap.insert("Blinky Bill", "A koala.").unwrap();
        snap.insert("Dorothy Wall", "An author.").unwrap();
        let d = dialogue(&["Who wrote Blinky Bill?"]);
        let index = EvidenceIndex::new(snap, std::slice::from_ref(&d));
        assert_eq!(index.titles_for("Dorothy Wall wrote it.", &d), ["Dorothy Wall", "Blinky Bill"]);
        assert_eq!(index.titles_for("Blinky Bill is a koala.", &d), ["Blinky Bill"]);
    }

    #[test]
    fn metric_rows() {
        let d = dialogue(&["Who wrote Blinky Bill?"]);
        let index = EvidenceIndex::new(KnowledgeSnapshot::new(), &[]);
        let linker = AliasLinker::build(["Dorothy Wall", "Blinky Bill"], []);
        let (gw, _) = gateway(vec![]);
        let r =
            Response { dialogue_id: "d".into(), method: "m".into(), text: "Dorothy Wall wrote Blinky Bill.".into() };
        let row = metric_row(&linker, Some(&gw), &r, &d);
        assert_eq!(row.bleu4, Some(1.0));
        assert_eq!(row.rouge_l, Some(1.0));
        assert_eq!(row.entity_f1, Some(1.0));
        assert!((row.ppl.unwrap() - 2.0).abs() < 1e-12);
        let no_ref = Dialogue { reference: None, ..d };
        let row = metric_row(&index.linker, None, &r, &no_ref);
        assert_eq!((row.bleu4, row.ppl), (None, None));
    }
}
