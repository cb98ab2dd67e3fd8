//! Dialogue fact score: atomic-fact parsing, entity linking, evidence
//! assembly, verdict parsing and aggregation into Fact / NEIP.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::text::{normalize_title, tokenize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FactScoreError {
    #[error("no verdicts to aggregate")]
    EmptyVerdicts,
    #[error("no reports to aggregate")]
    EmptyReports,
    #[error("no response has a defined fact score")]
    NoDefinedScores,
    #[error("duplicate snapshot title {0}")]
    DuplicateTitle(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicFact {
    pub response_id: String,
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    True,
    False,
    NotEnoughInfo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub fact: AtomicFact,
    pub label: Label,
    pub evidence_titles: Vec<String>,
}

/// Per-response verdicts with `fact_score = |T| / (|T| + |F|)` (undefined
/// when nothing was verifiable) and `neip = |NEI| / |verdicts|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactReport {
    pub response_id: String,
    pub verdicts: Vec<Verdict>,
    pub fact_score: Option<f64>,
    pub neip: f64,
}

impl FactReport {
    pub fn new(response_id: impl Into<String>, verdicts: Vec<Verdict>) -> Result<Self, FactScoreError> {
        let (fact_score, neip) = aggregate(&verdicts)?;
        Ok(FactReport { response_id: response_id.into(), verdicts, fact_score, neip })
    }

    pub fn counts(&self) -> LabelCounts {
        LabelCounts::of(self.verdicts.iter().map(|v| v.label))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LabelCounts {
    pub true_: usize,
    pub false_: usize,
    pub nei: usize,
}

impl LabelCounts {
    pub fn of<I: IntoIterator<Item = Label>>(labels: I) -> Self {
        labels.into_iter().fold(LabelCounts::default(), |mut c, l| {
            match l {
                Label::True => c.true_ += 1,
                Label::False => c.false_ += 1,
                Label::NotEnoughInfo => c.nei += 1,
            }
            c
        })
    }

    pub fn total(&self) -> usize {
        self.true_ + self.false_ + self.nei
    }
}

/// `(fact_score, neip)` for one response.
pub fn aggregate(verdicts: &[Verdict]) -> Result<(Option<f64>, f64), FactScoreError> {
    aggregate_labels(verdicts.iter().map(|v| v.label))
}

pub fn aggregate_labels<I: IntoIterator<Item = Label>>(labels: I) -> Result<(Option<f64>, f64), FactScoreError> {
    let c = LabelCounts::of(labels);
    if c.total() == 0 {
        return Err(FactScoreError::EmptyVerdicts);
    }
    let verifiable = c.true_ + c.false_;
    let fact = (verifiable > 0).then(|| c.true_ as f64 / verifiable as f64);
    Ok((fact, c.nei as f64 / c.total() as f64))
}

/// Corpus-level Fact and NEIP as percentages rounded to two decimals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusFact {
    pub fact: f64,
    pub neip: f64,
    pub n_responses: usize,
    pub n_defined: usize,
    pub n_facts: usize,
}

/// Macro average over responses. Responses without a defined fact score are
/// left out of the Fact mean but still count towards NEIP.
pub fn corpus_fact(reports: &[FactReport]) -> Result<CorpusFact, FactScoreError> {
    if reports.is_empty() {
        return Err(FactScoreError::EmptyReports);
    }
    let defined: Vec<f64> = reports.iter().filter_map(|r| r.fact_score).collect();
    if defined.is_empty() {
        return Err(FactScoreError::NoDefinedScores);
    }
    let neip: Vec<f64> = reports.iter().map(|r| r.neip).collect();
    Ok(CorpusFact {
        fact: percent(order_free_mean(&defined).expect("non-empty")),
        neip: percent(order_free_mean(&neip).expect("non-empty")),
        n_responses: reports.len(),
        n_defined: defined.len(),
        n_facts: reports.iter().map(|r| r.verdicts.len()).sum(),
    })
}

/// Mean of `values` summed in sorted order, so the result does not depend on
/// the order of the input. `None` when empty.
pub fn order_free_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v.iter().sum::<f64>() / v.len() as f64)
}

/// `x` as a percentage with two decimals.
pub fn percent(x: f64) -> f64 {
    libm::round(x * 10_000.0) / 100.0
}

/// Splits an atomic-split reply into fact sentences.
///
/// One fact per non-blank line with list markers (`1.`, `2)`, `-`, `*`, `•`)
/// stripped. Returns `(facts, fallback)`; when nothing parses the whole
/// response becomes the single fact and `fallback` is true.
pub fn parse_atomic_facts(response_text: &str, reply: &str) -> (Vec<String>, bool) {
    let facts: Vec<String> = reply.lines().map(strip_enumeration).filter(|l| !l.is_empty()).map(String::from).collect();
    if facts.is_empty() {
        (alloc::vec![response_text.trim().into()], true)
    } else {
        (facts, false)
    }
}

fn strip_enumeration(line: &str) -> &str {
    let line = line.trim();
    for bullet in ["- ", "* ", "• "] {
        if let Some(rest) = line.strip_prefix(bullet) {
            return rest.trim();
        }
    }
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(rest) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            if rest.is_empty() || rest.starts_with(char::is_whitespace) {
                return rest.trim();
            }
        }
    }
    line
}

pub fn to_atomic_facts(response_id: &str, facts: Vec<String>) -> Vec<AtomicFact> {
    facts
        .into_iter()
        .enumerate()
        .map(|(index, text)| AtomicFact { response_id: response_id.into(), index, text })
        .collect()
}

/// Maps a verifier reply to a label. Tokens are scanned left to right and the
/// first of `true`, `false`, `not enough information` or `no enough
/// information` decides. Returns `None` when none occurs.
pub fn parse_verdict(reply: &str) -> Option<Label> {
    let words = tokenize(reply);
    words.iter().enumerate().find_map(|(i, w)| match w.as_str() {
        "true" => Some(Label::True),
        "false" => Some(Label::False),
        "not" | "no"
            if words.get(i + 1).map(String::as_str) == Some("enough")
                && words.get(i + 2).map(String::as_str) == Some("information") =>
        {
            Some(Label::NotEnoughInfo)
        }
        _ => None,
    })
}

/// Title → passage evidence store with normalized, case-insensitive lookup.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeSnapshot {
    entries: BTreeMap<String, (String, String)>,
}

impl KnowledgeSnapshot {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, title: impl Into<String>, passage: impl Into<String>) -> Result<(), FactScoreError> {
        let title = title.into();
        let key = normalize_title(&title);
        if self.entries.contains_key(&key) {
            return Err(FactScoreError::DuplicateTitle(title));
        }
        self.entries.insert(key, (title, passage.into()));
        Ok(())
    }

    /// `(title, passage)` for a title in any casing or spacing.
    pub fn get(&self, title: &str) -> Option<(&str, &str)> {
        self.entries.get(&normalize_title(title)).map(|(t, p)| (t.as_str(), p.as_str()))
    }

    pub fn titles(&self) -> impl Iterator<Item = &str> {
        self.entries.values().map(|(t, _)| t.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Passages for the titles found, in request order, each prefixed with
/// `Title: <title>\n` and separated by a blank line. Unknown and repeated
/// titles are skipped.
pub fn retrieve_evidence<S: AsRef<str>>(snapshot: &KnowledgeSnapshot, titles: &[S]) -> String {
    let mut seen = BTreeSet::new();
    let mut out = String::new();
    for title in titles {
        let Some((canonical, passage)) = snapshot.get(title.as_ref()) else { continue };
        if !seen.insert(normalize_title(canonical)) {
            continue;
        }
        if !out.is_empty() {
            out.push_str("\n\n");
        }
        out.push_str("Title: ");
        out.push_str(canonical);
        out.push('\n');
        out.push_str(passage);
    }
    out
}

/// Dictionary entity linker: normalized alias → canonical title, matched
/// greedily longest-first at word boundaries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AliasLinker {
    aliases: BTreeMap<String, String>,
    lengths: BTreeSet<usize>,
}

impl AliasLinker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Snapshot titles first, then knowledge-graph node labels. The first
    /// canonical form registered for an alias is kept.
    pub fn build<'a, A, B>(titles: A, node_labels: B) -> Self
    where
        A: IntoIterator<Item = &'a str>,
        B: IntoIterator<Item = &'a str>,
    {
        let mut linker = AliasLinker::new();
        for t in titles.into_iter().chain(node_labels) {
            linker.add(t, t);
        }
        linker
    }

    pub fn add(&mut self, alias: &str, canonical: &str) {
        let key = normalize_title(alias);
        if key.is_empty() || self.aliases.contains_key(&key) {
            return;
        }
        self.lengths.insert(key.len());
        self.aliases.insert(key, canonical.into());
    }

    pub fn len(&self) -> usize {
        self.aliases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aliases.is_empty()
    }

    /// Canonical titles mentioned in `text`, each once, in order of first occurrence.
    pub fn link(&self, text: &str) -> Vec<String> {
        let norm = normalize_title(text);
        let bytes = norm.as_bytes();
        let is_word_char = |s: &str| s.chars().next_back().is_some_and(char::is_alphanumeric);
        let mut found: Vec<String> = Vec::new();
        let mut i = 0;
        while i < norm.len() {
            let at_start = i == 0 || !is_word_char(&norm[..i]);
            let mut advanced = false;
            if at_start && norm[i..].chars().next().is_some_and(char::is_alphanumeric) {
                for &len in self.lengths.iter().rev() {
                    let end = i + len;
                    let Some(candidate) = norm.get(i..end) else { continue };
                    let at_end = end == bytes.len() || !norm[end..].chars().next().is_some_and(char::is_alphanumeric);
                    if !at_end {
                        continue;
                    }
                    if let Some(canonical) = self.aliases.get(candidate) {
                        if !found.contains(canonical) {
                            found.push(canonical.clone());
                        }
                        i = end;
                        advanced = true;
                        break;
                    }
                }
            }
            if !advanced {
                i += norm[i..].chars().next().map_or(1, char::len_utf8);
            }
        }
        found
    }
}
