//! Allocation-only building blocks for knowledge-grounded dialogue response
//! generation and dialogue factuality evaluation.
//!
//! Everything in this crate is pure: no IO, no clocks, no threads. The `factdial`
//! crate layers file formats, the LLM gateway and the CLI on top.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

pub mod factscore;
pub mod metrics;
pub mod model;
pub mod pcst;
pub mod prompt;
pub mod reformulation;
pub mod selection;
pub mod text;

pub use factscore::{AliasLinker, AtomicFact, FactReport, KnowledgeSnapshot, Label, Verdict};
pub use model::{
    Dialogue, DialogueSenseGraph, KnowledgeGraph, ModelError, Response, ScoredTriple, Speaker, Triple, Utterance,
    Variant,
};
pub use prompt::{PromptTemplate, TemplateName};
