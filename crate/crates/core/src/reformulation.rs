//! Parsing of chain-of-thought coreference resolution replies.

use alloc::string::String;
use alloc::vec::Vec;

use crate::model::{Dialogue, Speaker, Utterance};

pub const COT_MARKER: &str = "**Chain of Thought**:";
pub const RESOLVED_MARKER: &str = "**Resolved Dialogue**:";

/// A dialogue after coreference resolution.
///
/// When the reply could not be parsed, `fallback_used` is set and
/// `resolved_turns` is a copy of the original turns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReformulatedDialogue {
    pub original: Dialogue,
    pub resolved_turns: Vec<Utterance>,
    pub chain_of_thought: String,
    pub fallback_used: bool,
}

impl ReformulatedDialogue {
    pub fn identity(original: Dialogue) -> Self {
        ReformulatedDialogue {
            resolved_turns: original.turns.clone(),
            original,
            chain_of_thought: String::new(),
            fallback_used: false,
        }
    }

    /// The original dialogue with its turns replaced by the resolved ones.
    pub fn as_dialogue(&self) -> Dialogue {
        Dialogue { turns: self.resolved_turns.clone(), ..self.original.clone() }
    }
}

/// Parses `reply` against `original`, falling back to the original turns when
/// the resolved section is missing or does not line up turn for turn.
pub fn parse_reformulation(original: &Dialogue, reply: &str) -> ReformulatedDialogue {
    match parse_sections(reply, &original.turns) {
        Some((turns, cot)) => ReformulatedDialogue {
            original: original.clone(),
            resolved_turns: turns,
            chain_of_thought: cot,
            fallback_used: false,
        },
        None => ReformulatedDialogue {
            original: original.clone(),
            resolved_turns: original.turns.clone(),
            chain_of_thought: chain_of_thought(reply).unwrap_or_default(),
            fallback_used: true,
        },
    }
}

fn chain_of_thought(reply: &str) -> Option<String> {
    let start = reply.find(COT_MARKER)? + COT_MARKER.len();
    let rest = &reply[start..];
    let end = rest.find(RESOLVED_MARKER).unwrap_or(rest.len());
    Some(rest[..end].trim().into())
}

fn parse_sections(reply: &str, original: &[Utterance]) -> Option<(Vec<Utterance>, String)> {
    let start = reply.find(RESOLVED_MARKER)? + RESOLVED_MARKER.len();
    let turns = parse_speaker_lines(&reply[start..])?;
    if turns.len() != original.len() || turns.iter().zip(original).any(|(a, b)| a.speaker != b.speaker) {
        return None;
    }
    Some((turns, chain_of_thought(reply).unwrap_or_default()))
}

/// Splits on lines beginning `Speaker A:` / `Speaker B:` (markdown bold
/// tolerated). Other non-blank lines continue the preceding turn; text
/// before the first speaker line is ignored.
pub fn parse_speaker_lines(section: &str) -> Option<Vec<Utterance>> {
    let mut turns: Vec<(Speaker, String)> = Vec::new();
    for line in section.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some((speaker, text)) = speaker_line(line) {
            turns.push((speaker, text.into()));
        } else if let Some((_, text)) = turns.last_mut() {
            if !text.is_empty() {
                text.push(' ');
            }
            text.push_str(line);
        }
    }
    if turns.is_empty() {
        return None;
    }
    turns.into_iter().map(|(speaker, text)| Utterance::new(speaker, text).ok()).collect()
}

fn speaker_line(line: &str) -> Option<(Speaker, &str)> {
    let body = line.trim_start_matches('*');
    let (speaker, rest) = match body.strip_prefix("Speaker A:") {
        Some(rest) => (Speaker::A, rest),
        None => (Speaker::B, body.strip_prefix("Speaker B:")?),
    };
    Some((speaker, rest.trim_start_matches('*').trim()))
}
