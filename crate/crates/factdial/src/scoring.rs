//! Triple scorers that need the gateway, and per-dialogue selection.

use factdial_core::model::{Dialogue, DialogueSenseGraph, ScoredTriple, Triple, Variant};
use factdial_core::selection::{self, Bm25Params};
use factdial_core::text::{dialogue_text, render_turns, textualize_triple};
use factdial_core::TemplateName;
use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Bm25,
    Embedding,
    LlmJudge,
}

impl std::str::FromStr for ScorerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "bm25" => Ok(ScorerKind::Bm25),
            "embedding" => Ok(ScorerKind::Embedding),
            "llm_judge" | "llm" => Ok(ScorerKind::LlmJudge),
            other => Err(format!("unknown scorer {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub n: usize,
    pub scorer: ScorerKind,
    pub bm25: Bm25Params,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig { n: 5, scorer: ScorerKind::Bm25, bm25: Bm25Params::default() }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n == 0 {
            return Err("selection.n must be >= 1".into());
        }
        self.bm25.validate().map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreError {
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("scorer backend failed: {0}")]
    ScorerBackend(#[from] GatewayError),
    #[error(transparent)]
    Selection(#[from] selection::SelectionError),
}

/// Cosine similarity between the dialogue embedding and each textualized triple.
pub fn score_embedding(gw: &Gateway, dialogue_text: &str, pool: &[Triple]) -> Result<Vec<ScoredTriple>, ScoreError> {
    if pool.is_empty() {
        return Err(ScoreError::EmptyPool);
    }
    let mut texts = Vec::with_capacity(pool.len() + 1);
    texts.push(dialogue_text.to_string());
    texts.extend(pool.iter().map(textualize_triple));
    let vectors = gw.embed(&texts)?;
    Ok(selection::score_by_similarity(&vectors[0], pool, &vectors[1..]))
}

/// LLM-judge scores plus what is needed to order ties.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgeScores {
    pub scored: Vec<ScoredTriple>,
    /// Embedding similarity per pool position, when the backend could embed.
    pub tie_break: Option<Vec<f64>>,
    /// Pool positions whose reply had no Relevant/Irrelevant label.
    pub unparseable: Vec<usize>,
}

/// One relevance call per triple: `Relevant` → 1.0, `Irrelevant` → 0.0,
/// anything else → 0.0 with a warning.
pub fn score_llm(gw: &Gateway, key: &str, dialogue: &str, pool: &[Triple]) -> Result<JudgeScores, ScoreError> {
    if pool.is_empty() {
        return Err(ScoreError::EmptyPool);
    }
    let template = TemplateName::Relevance.template();
    let mut scored = Vec::with_capacity(pool.len());
    let mut unparseable = Vec::new();
    for (i, triple) in pool.iter().enumerate() {
        let triple_text = textualize_triple(triple);
        let prompt = template
            .render(&[("Dialogue", dialogue), ("Triple", &triple_text)])
            .expect("relevance bindings are complete");
        let reply = gw.complete(&prompt, Some(key))?;
        let score = selection::parse_relevance(&reply).unwrap_or_else(|| {
            log::warn!("{key}: unparseable relevance label for triple {i}: {reply:?}");
            unparseable.push(i);
            0.0
        });
        scored.push(ScoredTriple { triple: triple.clone(), score, source_index: i });
    }
    let tie_break = match score_embedding(gw, dialogue, pool) {
        Ok(s) => Some(s.into_iter().map(|st| st.score).collect()),
        Err(e) => {
            log::debug!("{key}: no embedding tie-break ({e})");
            None
        }
    };
    Ok(JudgeScores { scored, tie_break, unparseable })
}

/// Scores the dialogue's pool with the configured scorer.
///
/// BM25 uses the last utterance as its query; the other scorers see the whole
/// dialogue. Returns every scored triple plus the Top-N graph.
pub fn select_for_dialogue(
    gw: Option<&Gateway>,
    cfg: &SelectionConfig,
    dialogue: &Dialogue,
    variant: Variant,
) -> Result<(Vec<ScoredTriple>, DialogueSenseGraph), ScoreError> {
    if dialogue.triples.is_empty() {
        return Ok((Vec::new(), DialogueSenseGraph::empty(&dialogue.id, variant, cfg.n)));
    }
    let need_gateway = || gw.ok_or(ScoreError::ScorerBackend(GatewayError::Precondition("scorer needs a gateway")));
    match cfg.scorer {
        ScorerKind::Bm25 => {
            let scored = selection::score_bm25(&dialogue.last_turn().text, &dialogue.triples, cfg.bm25)?;
            let graph = selection::select_top_n(&dialogue.id, variant, &scored, cfg.n);
            Ok((scored, graph))
        }
        ScorerKind::Embedding => {
            let scored = score_embedding(need_gateway()?, &dialogue_text(&dialogue.turns), &dialogue.triples)?;
            let graph = selection::select_top_n(&dialogue.id, variant, &scored, cfg.n);
            Ok((scored, graph))
        }
        ScorerKind::LlmJudge => {
            let judged = score_llm(need_gateway()?, &dialogue.id, &render_turns(&dialogue.turns), &dialogue.triples)?;
            let graph = match &judged.tie_break {
                Some(tb) => selection::select_top_n_tiebroken(&dialogue.id, variant, &judged.scored, tb, cfg.n),
                None => selection::select_top_n(&dialogue.id, variant, &judged.scored, cfg.n),
            };
            Ok((judged.scored, graph))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{GatewayConfig, MockBackend, MockRule, MockScript};
    use factdial_core::{Speaker, Utterance};
    use std::sync::Arc;

    fn pool() -> Vec<Triple> {
        vec![
            Triple::new("Judd Trump", "sport", "snooker").unwrap(),
            Triple::new("Judd Trump", "given name", "Judd").unwrap(),
            Triple::new("Judd Trump", "nickname", "The Ace").unwrap(),
        ]
    }

    fn gateway(script: MockScript) -> Gateway {
        Gateway::new(GatewayConfig::default(), Arc::new(MockBackend::new(script)))
    }

    #[test]
    fn identical_text_scores_one() {
        let gw = gateway(MockScript::default());
        let s = score_embedding(&gw, "(Judd Trump, sport, snooker)", &pool()).unwrap();
        assert!((s[0].score - 1.0).abs() < 1e-12);
        assert!(s[1].score < 1.0);
    }

    #[test]
    fn judge_labels_and_fallback() {
        let rule = |contains: &str, reply: &str| MockRule {
            template: Some(TemplateName::Relevance),
            contains: Some(contains.into()),
            reply: Some(reply.into()),
            ..MockRule::default()
        };
        let gw = gateway(MockScript {
            rules: vec![
                rule("sport", "Relevant"),
                rule("given name", "This is Irrelevant."),
                rule("nickname", "maybe"),
            ],
            ..MockScript::default()
        });
        let j = score_llm(&gw, "d", "Speaker A: Who is Judd Trump?", &pool()).unwrap();
        let scores: Vec<f64> = j.scored.iter().map(|s| s.score).collect();
        assert_eq!(scores, [1.0, 0.0, 0.0]);
        assert_eq!(j.unparseable, [2]);
        assert_eq!(j.tie_break.as_ref().map(Vec::len), Some(3));
    }

    #[test]
    fn judge_without_embeddings_ties_by_index() {
        let gw = gateway(MockScript {
            rules: vec![MockRule {
                template: Some(TemplateName::Relevance),
                reply: Some("Relevant".into()),
                ..MockRule::default()
            }],
            embedding_status: Some(400),
            ..MockScript::default()
        });
        let d = Dialogue {
            id: "d".into(),
            turns: vec![Utterance::new(Speaker::A, "Who is Judd Trump?").unwrap()],
            reference: None,
            triples: pool(),
        };
        let cfg = SelectionConfig { n: 2, scorer: ScorerKind::LlmJudge, ..SelectionConfig::default() };
        let (_, g) = select_for_dialogue(Some(&gw), &cfg, &d, Variant::Original).unwrap();
        let idx: Vec<usize> = g.triples.iter().map(|t| t.source_index).collect();
        assert_eq!(idx, [0, 1]);
    }

    #[test]
    fn empty_pool_gives_empty_graph() {
        let d = Dialogue {
            id: "d".into(),
            turns: vec![Utterance::new(Speaker::A, "hi").unwrap()],
            reference: None,
            triples: vec![],
        };
        let (scored, g) = select_for_dialogue(None, &SelectionConfig::default(), &d, Variant::Original).unwrap();
        assert!(scored.is_empty() && g.triples.is_empty());
        assert!(matches!(score_embedding(&gateway(MockScript::default()), "x", &[]), Err(ScoreError::EmptyPool)));
    }

    #[test]
    fn backend_errors_propagate() {
        let gw = gateway(MockScript { embedding_status: Some(400), ..MockScript::default() });
        assert_eq!(score_embedding(&gw, "x", &pool()), Err(ScoreError::ScorerBackend(GatewayError::HttpStatus(400))));
    }
}
