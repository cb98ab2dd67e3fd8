//! Deterministic scripted backend for offline runs.
//!
//! Replies come from an ordered rule table matched on template name, the
//! request key (dialogue id) and an optional substring of the prompt. Rules
//! may inject HTTP failures. Embeddings are hash-seeded unit vectors and every
//! token gets the same log probability.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use factdial_core::prompt::{ATOMIC_SPLIT, REFORMULATE};
use factdial_core::reformulation::{COT_MARKER, RESOLVED_MARKER};
use factdial_core::TemplateName;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, ChatRequest, ChatResult, GatewayConfig, GatewayError, TokenLogprob};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<TemplateName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialogue_id: Option<String>,
    /// Substring the final user message must contain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    /// Fail with this HTTP status instead of replying.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    /// How many times `status` fires before the rule stops failing; unlimited when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<usize>,
}

impl MockRule {
    fn matches(&self, template: Option<TemplateName>, req: &ChatRequest) -> bool {
        self.template.is_none_or(|t| Some(t) == template)
            && self.dialogue_id.as_ref().is_none_or(|id| req.key.as_ref() == Some(id))
            && self.contains.as_ref().is_none_or(|s| req.last_user_content().contains(s.as_str()))
    }
}

fn default_dim() -> usize {
    32
}

fn default_logprob() -> f64 {
    0.5f64.ln()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_logprob")]
    pub logprob: f64,
    #[serde(default = "yes")]
    pub supports_logprobs: bool,
    /// Fail every embedding call with this status.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_status: Option<u16>,
}

impl Default for MockScript {
    fn default() -> Self {
        MockScript {
            rules: Vec::new(),
            embedding_dim: default_dim(),
            logprob: default_logprob(),
            supports_logprobs: true,
            embedding_status: None,
        }
    }
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// A chat request as seen by the mock.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedCall {
    pub template: Option<TemplateName>,
    pub key: Option<String>,
    pub prompt: String,
}

#[derive(Debug)]
pub struct MockBackend {
    script: MockScript,
    fired: Vec<AtomicUsize>,
    chat_calls: AtomicUsize,
    log: Mutex<Vec<LoggedCall>>,
}

impl Default for MockBackend {
    fn default() -> Self {
        MockBackend::new(MockScript::default())
    }
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        let fired = script.rules.iter().map(|_| AtomicUsize::new(0)).collect();
        MockBackend { script, fired, chat_calls: AtomicUsize::new(0), log: Mutex::new(Vec::new()) }
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    /// Chat attempts received, failed ones included.
    pub fn chat_calls(&self) -> usize {
        self.chat_calls.load(Ordering::SeqCst)
    }

    /// Every chat request received, in arrival order.
    pub fn calls(&self) -> Vec<LoggedCall> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn reply_for(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let template = req.template();
        for (rule, fired) in self.script.rules.iter().zip(&self.fired) {
            if !rule.matches(template, req) {
                continue;
            }
            if let Some(status) = rule.status {
                let n = fired.fetch_add(1, Ordering::SeqCst);
                if rule.times.is_none_or(|t| n < t) {
                    return Err(GatewayError::HttpStatus(status));
                }
            }
            if let Some(reply) = &rule.reply {
                return Ok(reply.clone());
            }
        }
        Ok(default_reply(template, req.last_user_content()))
    }

    /// Hash-seeded unit vector; identical texts map to identical vectors.
    pub fn embedding(&self, text: &str) -> Vec<f64> {
        let digest = Sha256::digest(text.as_bytes());
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..self.script.embedding_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect()
    }

    pub fn token_logprobs(&self, text: &str) -> Vec<TokenLogprob> {
        text.split_whitespace().map(|t| TokenLogprob { token: t.into(), logprob: self.script.logprob }).collect()
    }
}

/// The text bound to the single placeholder of `body`, if `prompt` was rendered from it.
fn slot_value<'a>(body: &str, prompt: &'a str) -> Option<&'a str> {
    let open = body.find('{')?;
    let close = body[open..].find('}')? + open;
    let (pre, post) = (&body[..open], &body[close + 1..]);
    prompt.strip_prefix(pre)?.strip_suffix(post)
}

fn default_reply(template: Option<TemplateName>, prompt: &str) -> String {
    match template {
        // Identity resolution: echo the dialogue back unchanged.
        Some(TemplateName::Reformulate) => format!(
            "{COT_MARKER} No pronouns or references need resolving.\n\n{RESOLVED_MARKER}\n{}",
            slot_value(REFORMULATE, prompt).unwrap_or_default()
        ),
        Some(TemplateName::Relevance) => "Irrelevant".into(),
        Some(TemplateName::Generate) => "I'm not sure about that.".into(),
        Some(TemplateName::AtomicSplit) => slot_value(ATOMIC_SPLIT, prompt).unwrap_or_default().into(),
        Some(TemplateName::Verify) => "no enough information.".into(),
        None => "OK".into(),
    }
}

impl Backend for MockBackend {
    fn chat(&self, _cfg: &GatewayConfig, req: &ChatRequest) -> Result<ChatResult, GatewayError> {
        self.chat_calls.fetch_add(1, Ordering::SeqCst);
        self.log.lock().unwrap_or_else(|e| e.into_inner()).push(LoggedCall {
            template: req.template(),
            key: req.key.clone(),
            prompt: req.last_user_content().into(),
        });
        let text = self.reply_for(req)?;
        Ok(ChatResult { text, token_logprobs: None })
    }

    fn embed(&self, _cfg: &GatewayConfig, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        if let Some(status) = self.script.embedding_status {
            return Err(GatewayError::HttpStatus(status));
        }
        Ok(texts.iter().map(|t| self.embedding(t)).collect())
    }

    fn logprobs(&self, _cfg: &GatewayConfig, text: &str) -> Result<Vec<TokenLogprob>, GatewayError> {
        if !self.script.supports_logprobs {
            return Err(GatewayError::Unsupported("logprobs"));
        }
        Ok(self.token_logprobs(text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Gateway;
    use std::sync::Arc;

    fn req(template: TemplateName, slot: &str, key: &str) -> ChatRequest {
        let t = template.template();
        let bindings: Vec<(&str, &str)> = t.placeholders().into_iter().map(|p| (p, slot)).collect();
        ChatRequest::prompt(t.render(&bindings).unwrap(), Some(key))
    }

    #[test]
    fn rule_order_and_keys() {
        let script = MockScript {
            rules: vec![
                MockRule {
                    template: Some(TemplateName::Generate),
                    dialogue_id: Some("d0".into()),
                    contains: Some("Panettiere".into()),
                    reply: Some("specific".into()),
                    ..MockRule::default()
                },
                MockRule {
                    template: Some(TemplateName::Generate),
                    dialogue_id: Some("d0".into()),
                    reply: Some("general".into()),
                    ..MockRule::default()
                },
            ],
            ..MockScript::default()
        };
        let mock = MockBackend::new(script);
        assert_eq!(
            mock.reply_for(&req(TemplateName::Generate, "Is Hayden Panettiere here?", "d0")).unwrap(),
            "specific"
        );
        assert_eq!(mock.reply_for(&req(TemplateName::Generate, "Is she here?", "d0")).unwrap(), "general");
        assert_eq!(mock.reply_for(&req(TemplateName::Generate, "x", "d1")).unwrap(), "I'm not sure about that.");
    }

    #[test]
    fn defaults_echo_inputs() {
        let mock = MockBackend::default();
        let split = mock.reply_for(&req(TemplateName::AtomicSplit, "Montevideo, population, 309331", "d")).unwrap();
        assert_eq!(split, "Montevideo, population, 309331");
        let dialogue = "Speaker A: Hi\nSpeaker B: Hello";
        let reform = mock.reply_for(&req(TemplateName::Reformulate, dialogue, "d")).unwrap();
        assert!(reform.ends_with(&format!("{RESOLVED_MARKER}\n{dialogue}")));
        assert_eq!(mock.reply_for(&req(TemplateName::Verify, "x", "d")).unwrap(), "no enough information.");
    }

    #[test]
    fn limited_failures_then_reply() {
        let script = MockScript {
            rules: vec![MockRule {
                status: Some(503),
                times: Some(2),
                reply: Some("ok".into()),
                ..MockRule::default()
            }],
            ..MockScript::default()
        };
        let mock = Arc::new(MockBackend::new(script));
        let cfg = GatewayConfig { max_retries: 2, retry_base_ms: 1, ..GatewayConfig::default() };
        let gw = Gateway::new(cfg, mock.clone());
        assert_eq!(gw.complete("hello", None).unwrap(), "ok");
        assert_eq!(mock.chat_calls(), 3);
    }

    #[test]
    fn embeddings_are_deterministic_unit_vectors() {
        let mock = MockBackend::default();
        let a = mock.embedding("a");
        assert_eq!(a, mock.embedding("a"));
        assert_ne!(a, mock.embedding("b"));
        assert_eq!(a.len(), 32);
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_logprobs() {
        let lp = MockBackend::default().token_logprobs("the cat sat");
        assert_eq!(lp.len(), 3);
        assert!(lp.iter().all(|t| t.logprob == 0.5f64.ln()));
    }
}
