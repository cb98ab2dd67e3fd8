//! Prompt templates and placeholder rendering.
//!
//! Placeholders are written `{Name}`. Rendering is a single left-to-right pass,
//! so braces inside bound values are never re-expanded.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("missing placeholder binding {{{0}}}")]
    MissingPlaceholder(String),
    #[error("unterminated placeholder at byte {0}")]
    Unterminated(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TemplateName {
    Reformulate,
    Relevance,
    Generate,
    AtomicSplit,
    Verify,
}

impl TemplateName {
    pub const ALL: [TemplateName; 5] = [
        TemplateName::Reformulate,
        TemplateName::Relevance,
        TemplateName::Generate,
        TemplateName::AtomicSplit,
        TemplateName::Verify,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::Reformulate => "Reformulate",
            TemplateName::Relevance => "Relevance",
            TemplateName::Generate => "Generate",
            TemplateName::AtomicSplit => "AtomicSplit",
            TemplateName::Verify => "Verify",
        }
    }

    pub fn template(self) -> PromptTemplate {
        let body = match self {
            TemplateName::Reformulate => REFORMULATE,
            TemplateName::Relevance => RELEVANCE,
            TemplateName::Generate => GENERATE,
            TemplateName::AtomicSplit => ATOMIC_SPLIT,
            TemplateName::Verify => VERIFY,
        };
        PromptTemplate { name: self, body }
    }

    /// A phrase that only this template's body contains.
    fn marker(self) -> &'static str {
        match self {
            TemplateName::Reformulate => "resolving all pronouns and references in the given dialogue",
            TemplateName::Relevance => "judge whether the triple is relevant to the dialogue",
            TemplateName::Generate => "ensure the response is fluent and fact-consistent",
            TemplateName::AtomicSplit => "split it into atomic sentences based only on the given information",
            TemplateName::Verify => "Output true if the statement is directly supported",
        }
    }

    /// Identifies which template a rendered prompt came from.
    pub fn detect(prompt: &str) -> Option<TemplateName> {
        TemplateName::ALL.into_iter().find(|name| prompt.contains(name.marker()))
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for TemplateName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateName::ALL
            .into_iter()
            .find(|n| n.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| alloc::format!("unknown template {s}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub body: &'static str,
}

enum Piece<'a> {
    Literal(&'a str),
    Slot(&'a str),
}

fn pieces(body: &str) -> Result<Vec<Piece<'_>>, PromptError> {
    let mut out = Vec::new();
    let mut rest = body;
    let mut offset = 0;
    while let Some(open) = rest.find('{') {
        let close = rest[open..].find('}').ok_or(PromptError::Unterminated(offset + open))?;
        out.push(Piece::Literal(&rest[..open]));
        out.push(Piece::Slot(&rest[open + 1..open + close]));
        offset += open + close + 1;
        rest = &rest[open + close + 1..];
    }
    out.push(Piece::Literal(rest));
    Ok(out)
}

impl PromptTemplate {
    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<&'static str> {
        let mut names: Vec<&'static str> = Vec::new();
        for piece in pieces(self.body).expect("built-in templates are well formed") {
            if let Piece::Slot(name) = piece {
                if !names.contains(&name) {
                    names.push(name);
                }
            }
        }
        names
    }

    /// Substitutes every placeholder from `bindings`; extra bindings are ignored.
    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, PromptError> {
        render_body(self.body, bindings)
    }
}

pub fn render_body(body: &str, bindings: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(body.len());
    for piece in pieces(body)? {
        match piece {
            Piece::Literal(s) => out.push_str(s),
            Piece::Slot(name) => {
                let value = bindings
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| PromptError::MissingPlaceholder(name.into()))?;
                out.push_str(value);
            }
        }
    }
    Ok(out)
}

pub const REFORMULATE: &str = "You are tasked with resolving all pronouns and references in the given dialogue to their explicit entities. Use CoT (Chain of Thought) reasoning to identify what each pronoun or reference corresponds to. Do not answer any questions; your only goal is to perform co-reference resolution.

Instructions:

1. Analyze the dialogue and process each turn in the conversation.

2. For every pronoun, ambiguous term, or reference, trace back in the conversation to determine its explicit entity or subject.

3. Clearly document your CoT reasoning for each resolution.

4. Provide the explicit reference for each pronoun or ambiguous term.

Output Format:

**Chain of Thought**: [Your reasoning process for resolving the references]

**Resolved Dialogue**: [The dialogue with all pronouns and references resolved]
Dialogue: {Dialogue}";

pub const RELEVANCE: &str =
    "Given the dialogue and the knowledge triple below, judge whether the triple is relevant to the dialogue.
Answer with exactly one word: Relevant or Irrelevant.
Dialogue: {Dialogue}
Triple: {Triple}
Relevance:";

pub const GENERATE: &str = "Knowledge: {Selected Triples}
Dialogue: {Dialogue Context}
Given the above knowledge and dialogue, please respond to the input below and ensure the response is fluent and fact-consistent in English.
Input: {Last Utterance}
Response:";

pub const ATOMIC_SPLIT: &str = "If the following input is an incomplete sentence or a phrase, please output it exactly as it is.
Otherwise, if it is a complete sentence, split it into atomic sentences based only on the given information, without adding any additional information or making inferences:
Input: {Response}
Output:";

pub const VERIFY: &str = "Instruction:
The statement is part of a response in a dialogue. Evaluate the statement strictly based on the provided knowledge source and dialogue history only.
If the statement is not a factual claim (e.g., opinion, question, or unclear assertion), output: \"no enough information.\"

If it is a factual claim:
Output true if the statement is directly supported by evidence in the knowledge source or dialogue history.
Output false if the statement is directly contradicted by the knowledge source or dialogue history.
Output no enough information if there is no direct evidence for or against the statement.

Important:
Do not use your intern knowledge or make inferences.
Please only output your final answer and do not output any explanations.

Evidence: {Wikipedia Passages}
Dialogue history: {Dialogue}
Speaker A: {Speaker}
Statement: {Atomic Fact}";
