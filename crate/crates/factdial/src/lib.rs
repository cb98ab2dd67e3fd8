//! File formats, LLM gateway, pipeline orchestration, evaluators and the
//! `factdial` command line on top of `factdial-core`.

pub mod cli;
pub mod config;
pub mod evaluation;
pub mod formats;
pub mod gateway;
pub mod mock_server;
pub mod pipeline;
pub mod scoring;
