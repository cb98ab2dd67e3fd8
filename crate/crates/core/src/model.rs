//! Core domain types.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("utterance text is empty")]
    EmptyUtterance,
    #[error("dialogue has no turns")]
    NoTurns,
    #[error("dialogue id is empty")]
    EmptyId,
    #[error("triple has an empty {0}")]
    EmptyTripleField(&'static str),
    #[error("duplicate triple {0}")]
    DuplicateTriple(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Speaker {
    A,
    B,
}

impl Speaker {
    pub fn other(self) -> Speaker {
        match self {
            Speaker::A => Speaker::B,
            Speaker::B => Speaker::A,
        }
    }

    /// Prompt label, e.g. `Speaker A`.
    pub fn label(self) -> &'static str {
        match self {
            Speaker::A => "Speaker A",
            Speaker::B => "Speaker B",
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
}

impl Utterance {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Result<Self, ModelError> {
        let u = Utterance { speaker, text: text.into() };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.text.trim().is_empty() {
            return Err(ModelError::EmptyUtterance);
        }
        Ok(())
    }
}

/// A `(subject, predicate, object)` knowledge fact.
///
/// Serialized as a three-element array, matching the corpus file layout.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(String, String, String)", into = "(String, String, String)")]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl From<(String, String, String)> for Triple {
    fn from((subject, predicate, object): (String, String, String)) -> Self {
        Triple { subject, predicate, object }
    }
}

impl From<Triple> for (String, String, String) {
    fn from(t: Triple) -> Self {
        (t.subject, t.predicate, t.object)
    }
}

impl Triple {
    pub fn new(
        subject: impl Into<String>,
        predicate: impl Into<String>,
        object: impl Into<String>,
    ) -> Result<Self, ModelError> {
        let t = Triple { subject: subject.into(), predicate: predicate.into(), object: object.into() };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.subject.trim().is_empty() {
            return Err(ModelError::EmptyTripleField("subject"));
        }
        if self.predicate.trim().is_empty() {
            return Err(ModelError::EmptyTripleField("predicate"));
        }
        if self.object.trim().is_empty() {
            return Err(ModelError::EmptyTripleField("object"));
        }
        Ok(())
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.subject, self.predicate, self.object)
    }
}

/// One corpus entry: the turns so far, an optional gold response and the
/// candidate knowledge pool for this dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Utterance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default)]
    pub triples: Vec<Triple>,
}

impl Dialogue {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.id.trim().is_empty() {
            return Err(ModelError::EmptyId);
        }
        if self.turns.is_empty() {
            return Err(ModelError::NoTurns);
        }
        for turn in &self.turns {
            turn.validate()?;
        }
        let mut seen = BTreeSet::new();
        for t in &self.triples {
            t.validate()?;
            if !seen.insert(t) {
                return Err(ModelError::DuplicateTriple(alloc::format!("{t}")));
            }
        }
        Ok(())
    }

    /// The turn to respond to.
    pub fn last_turn(&self) -> &Utterance {
        self.turns.last().expect("validated dialogue has turns")
    }

    /// The speaker expected to produce the next response.
    pub fn responder(&self) -> Speaker {
        self.last_turn().speaker.other()
    }
}

/// `G = (V, E)` built from a triple list.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KnowledgeGraph {
    nodes: BTreeSet<String>,
    edges: Vec<Triple>,
}

impl KnowledgeGraph {
    pub fn from_triples<I: IntoIterator<Item = Triple>>(triples: I) -> Result<Self, ModelError> {
        let mut g = KnowledgeGraph::default();
        let mut seen = BTreeSet::new();
        for t in triples {
            t.validate()?;
            if !seen.insert(t.clone()) {
                return Err(ModelError::DuplicateTriple(alloc::format!("{t}")));
            }
            g.nodes.insert(t.subject.clone());
            g.nodes.insert(t.object.clone());
            g.edges.push(t);
        }
        Ok(g)
    }

    pub fn nodes(&self) -> &BTreeSet<String> {
        &self.nodes
    }

    pub fn edges(&self) -> &[Triple] {
        &self.edges
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Original,
    Reformulated,
}

/// A candidate triple with its relevance score and its position in the pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTriple {
    pub triple: Triple,
    pub score: f64,
    pub source_index: usize,
}

/// The Top-N triples chosen for one dialogue, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogueSenseGraph {
    pub dialogue_id: String,
    pub variant: Variant,
    pub triples: Vec<ScoredTriple>,
    pub n: usize,
}

impl DialogueSenseGraph {
    pub fn empty(dialogue_id: impl Into<String>, variant: Variant, n: usize) -> Self {
        DialogueSenseGraph { dialogue_id: dialogue_id.into(), variant, triples: Vec::new(), n }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub dialogue_id: String,
    pub method: String,
    pub text: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dialogue(triples: Vec<Triple>) -> Dialogue {
        Dialogue {
            id: "d".into(),
            turns: alloc::vec![Utterance::new(Speaker::A, "hello").unwrap()],
            reference: None,
            triples,
        }
    }

    #[test]
    fn blank_fields_rejected() {
        assert_eq!(Utterance::new(Speaker::A, "  \t"), Err(ModelError::EmptyUtterance));
        assert_eq!(Triple::new("a", " ", "c"), Err(ModelError::EmptyTripleField("predicate")));
        let mut d = dialogue(Vec::new());
        d.turns.clear();
        assert_eq!(d.validate(), Err(ModelError::NoTurns));
    }

    #[test]
    fn duplicate_triples_rejected() {
        let t = Triple::new("a", "b", "c").unwrap();
        let d = dialogue(alloc::vec![t.clone(), t.clone()]);
        assert!(matches!(d.validate(), Err(ModelError::DuplicateTriple(_))));
        assert!(KnowledgeGraph::from_triples([t.clone(), t]).is_err());
    }

    #[test]
    fn graph_nodes_cover_endpoints() {
        let g =
            KnowledgeGraph::from_triples([Triple::new("a", "r", "b").unwrap(), Triple::new("b", "r", "c").unwrap()])
                .unwrap();
        assert_eq!(g.nodes().len(), 3);
        assert_eq!(g.edges().len(), 2);
    }

    #[test]
    fn responder_alternates() {
        let d = dialogue(Vec::new());
        assert_eq!(d.responder(), Speaker::B);
    }
}
