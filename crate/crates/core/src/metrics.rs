//! Reference-based generation metrics and annotator agreement.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::factscore::AliasLinker;
use crate::text::tokenize;

/// Added to zero n-gram precisions before taking logs.
pub const BLEU_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("label lists are empty")]
    EmptyLabels,
    #[error("label lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU-4 with uniform weights, brevity penalty and add-ε smoothing.
pub fn bleu4(hypothesis: &str, reference: &str) -> f64 {
    let hyp = tokenize(hypothesis);
    let refs = tokenize(reference);
    if hyp.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let h = ngram_counts(&hyp, n);
        let r = ngram_counts(&refs, n);
        let total: usize = h.values().sum();
        let clipped: usize = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
        let p = if total == 0 { 0.0 } else { clipped as f64 / total as f64 };
        let p = if p == 0.0 { BLEU_EPSILON } else { p };
        log_sum += 0.25 * libm::log(p);
    }
    let (c, r) = (hyp.len() as f64, refs.len() as f64);
    let bp = if c < r { libm::exp(1.0 - r / c) } else { 1.0 };
    bp * libm::exp(log_sum)
}

/// Length of the longest common token subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L balanced F-measure over tokens.
pub fn rouge_l(hypothesis: &str, reference: &str) -> f64 {
    let hyp = tokenize(hypothesis);
    let refs = tokenize(reference);
    let lcs = lcs_len(&hyp, &refs);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / hyp.len() as f64;
    let r = lcs as f64 / refs.len() as f64;
    2.0 * p * r / (p + r)
}

/// F1 between the linked entity sets. Both empty scores 1.0, one empty 0.0.
pub fn entity_f1(linker: &AliasLinker, hypothesis: &str, reference: &str) -> f64 {
    let h: BTreeSet<String> = linker.link(hypothesis).into_iter().collect();
    let r: BTreeSet<String> = linker.link(reference).into_iter().collect();
    set_f1(&h, &r)
}

pub fn set_f1<T: Ord>(h: &BTreeSet<T>, r: &BTreeSet<T>) -> f64 {
    match (h.is_empty(), r.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let common = h.intersection(r).count() as f64;
    if common == 0.0 {
        return 0.0;
    }
    let p = common / h.len() as f64;
    let rc = common / r.len() as f64;
    2.0 * p * rc / (p + rc)
}

/// `exp(−mean logprob)`; `None` for an empty sequence.
pub fn perplexity(logprobs: &[f64]) -> Option<f64> {
    if logprobs.is_empty() {
        return None;
    }
    let mean = logprobs.iter().sum::<f64>() / logprobs.len() as f64;
    Some(libm::exp(-mean))
}

/// Two annotators' labels for the same items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelPair<L> {
    a: Vec<L>,
    b: Vec<L>,
}

impl<L> LabelPair<L> {
    pub fn new(a: Vec<L>, b: Vec<L>) -> Result<Self, MetricError> {
        if a.len() != b.len() {
            return Err(MetricError::LengthMismatch(a.len(), b.len()));
        }
        if a.is_empty() {
            return Err(MetricError::EmptyLabels);
        }
        Ok(LabelPair { a, b })
    }

    pub fn annotator_a(&self) -> &[L] {
        &self.a
    }

    pub fn annotator_b(&self) -> &[L] {
        &self.b
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn raw_agreement<L: PartialEq>(p: &LabelPair<L>) -> f64 {
    let agree = p.a.iter().zip(&p.b).filter(|(x, y)| x == y).count();
    agree as f64 / p.len() as f64
}

/// Expected chance agreement `Σ_c P_a(c) · P_b(c)`.
pub fn chance_agreement<L: Ord>(p: &LabelPair<L>) -> f64 {
    let mut marginals: BTreeMap<&L, (usize, usize)> = BTreeMap::new();
    for x in &p.a {
        marginals.entry(x).or_default().0 += 1;
    }
    for y in &p.b {
        marginals.entry(y).or_default().1 += 1;
    }
    let n = p.len() as f64;
    marginals.values().map(|&(ca, cb)| (ca as f64 / n) * (cb as f64 / n)).sum()
}

/// Cohen's kappa. When chance agreement is 1 (both annotators used one and
/// the same label throughout) the result is 1.0 if they agree everywhere, else 0.0.
pub fn cohen_kappa<L: Ord>(p: &LabelPair<L>) -> f64 {
    let po = raw_agreement(p);
    let pe = chance_agreement(p);
    if pe >= 1.0 {
        return if po == 1.0 { 1.0 } else { 0.0 };
    }
    (po - pe) / (1.0 - pe)
}
