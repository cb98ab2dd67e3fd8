//! Textualization of triples and graphs, title normalization and tokenization.

use alloc::string::String;
use alloc::vec::Vec;

use crate::model::{DialogueSenseGraph, Triple, Utterance};

/// Renders `(subject, predicate, object)`.
///
/// Not injective: commas inside fields are kept verbatim.
pub fn textualize_triple(t: &Triple) -> String {
    let mut s = String::with_capacity(t.subject.len() + t.predicate.len() + t.object.len() + 6);
    s.push('(');
    s.push_str(&t.subject);
    s.push_str(", ");
    s.push_str(&t.predicate);
    s.push_str(", ");
    s.push_str(&t.object);
    s.push(')');
    s
}

/// Space-joined textualized triples in stored order.
pub fn textualize_graph(g: &DialogueSenseGraph) -> String {
    textualize_triples(g.triples.iter().map(|st| &st.triple))
}

pub fn textualize_triples<'a, I: IntoIterator<Item = &'a Triple>>(triples: I) -> String {
    let mut out = String::new();
    for (i, t) in triples.into_iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&textualize_triple(t));
    }
    out
}

/// Lowercase, collapse whitespace runs to one space, trim.
pub fn normalize_title(s: &str) -> String {
    let lower = s.to_lowercase();
    let mut out = String::with_capacity(lower.len());
    for word in lower.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Lowercased alphanumeric runs.
pub fn tokenize(s: &str) -> Vec<String> {
    s.to_lowercase().split(|c: char| !c.is_alphanumeric()).filter(|tok| !tok.is_empty()).map(String::from).collect()
}

/// One `Speaker X: text` line per turn.
pub fn render_turns(turns: &[Utterance]) -> String {
    let mut out = String::new();
    for (i, turn) in turns.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(turn.speaker.label());
        out.push_str(": ");
        out.push_str(&turn.text);
    }
    out
}

/// Plain turn texts joined by newlines, without speaker labels.
pub fn dialogue_text(turns: &[Utterance]) -> String {
    let mut out = String::new();
    for (i, turn) in turns.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&turn.text);
    }
    out
}
