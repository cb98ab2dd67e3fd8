//! Triple scoring and Top-N dialogue sense graph construction.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::model::{DialogueSenseGraph, ScoredTriple, Triple, Variant};
use crate::text::{textualize_triple, tokenize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SelectionError {
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("invalid BM25 parameters: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.5, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), SelectionError> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(SelectionError::InvalidParams("k1 must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(SelectionError::InvalidParams("b must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Okapi BM25 of `query` against each textualized triple in `pool`.
///
/// `idf(t) = ln((D - df + 0.5) / (df + 0.5) + 1)`, which keeps scores
/// non-negative even when a term occurs in most of a tiny pool. Query terms
/// are summed per occurrence.
pub fn score_bm25(query: &str, pool: &[Triple], params: Bm25Params) -> Result<Vec<ScoredTriple>, SelectionError> {
    if pool.is_empty() {
        return Err(SelectionError::EmptyPool);
    }
    params.validate()?;

    let docs: Vec<Vec<String>> = pool.iter().map(|t| tokenize(&textualize_triple(t))).collect();
    let n_docs = docs.len() as f64;
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n_docs;

    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    let mut tf: Vec<BTreeMap<&str, usize>> = Vec::with_capacity(docs.len());
    for doc in &docs {
        let mut counts = BTreeMap::new();
        for tok in doc {
            *counts.entry(tok.as_str()).or_insert(0) += 1;
        }
        for tok in counts.keys() {
            *df.entry(*tok).or_insert(0) += 1;
        }
        tf.push(counts);
    }

    let query_terms = tokenize(query);
    let scored = pool
        .iter()
        .zip(docs.iter().zip(&tf))
        .enumerate()
        .map(|(i, (triple, (doc, counts)))| {
            let len_ratio = if avgdl > 0.0 { doc.len() as f64 / avgdl } else { 1.0 };
            let norm = params.k1 * (1.0 - params.b + params.b * len_ratio);
            let score = query_terms
                .iter()
                .map(|term| {
                    let f = counts.get(term.as_str()).copied().unwrap_or(0) as f64;
                    if f == 0.0 {
                        return 0.0;
                    }
                    let d = df.get(term.as_str()).copied().unwrap_or(0) as f64;
                    let idf = libm::log((n_docs - d + 0.5) / (d + 0.5) + 1.0);
                    idf * f * (params.k1 + 1.0) / (f + norm)
                })
                .sum();
            ScoredTriple { triple: triple.clone(), score, source_index: i }
        })
        .collect();
    Ok(scored)
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = libm::sqrt(a.iter().map(|x| x * x).sum());
    let nb = libm::sqrt(b.iter().map(|x| x * x).sum());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Pairs a dialogue embedding with triple embeddings in pool order.
pub fn score_by_similarity(query: &[f64], pool: &[Triple], triple_vectors: &[Vec<f64>]) -> Vec<ScoredTriple> {
    pool.iter()
        .zip(triple_vectors)
        .enumerate()
        .map(|(i, (t, v))| ScoredTriple { triple: t.clone(), score: cosine(query, v), source_index: i })
        .collect()
}

/// Maps a relevance-judge reply to 1.0 / 0.0. The first word that is exactly
/// `relevant` or `irrelevant` (case-insensitive) decides; `None` when neither occurs.
pub fn parse_relevance(reply: &str) -> Option<f64> {
    tokenize(reply).iter().find_map(|w| match w.as_str() {
        "relevant" => Some(1.0),
        "irrelevant" => Some(0.0),
        _ => None,
    })
}

fn by_score_then_index(a: &ScoredTriple, b: &ScoredTriple) -> Ordering {
    b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal).then(a.source_index.cmp(&b.source_index))
}

/// Stable sort by (score desc, source_index asc), keep the first `n`.
pub fn select_top_n(dialogue_id: &str, variant: Variant, scored: &[ScoredTriple], n: usize) -> DialogueSenseGraph {
    let mut sorted = scored.to_vec();
    sorted.sort_by(by_score_then_index);
    sorted.truncate(n);
    DialogueSenseGraph { dialogue_id: dialogue_id.into(), variant, triples: sorted, n }
}

/// Like [`select_top_n`], but equal scores are ordered by `tie_break`
/// (descending, indexed by `source_index`) before falling back to the index.
pub fn select_top_n_tiebroken(
    dialogue_id: &str,
    variant: Variant,
    scored: &[ScoredTriple],
    tie_break: &[f64],
    n: usize,
) -> DialogueSenseGraph {
    let secondary = |st: &ScoredTriple| tie_break.get(st.source_index).copied().unwrap_or(0.0);
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then(secondary(b).partial_cmp(&secondary(a)).unwrap_or(Ordering::Equal))
            .then(a.source_index.cmp(&b.source_index))
    });
    sorted.truncate(n);
    DialogueSenseGraph { dialogue_id: dialogue_id.into(), variant, triples: sorted, n }
}
