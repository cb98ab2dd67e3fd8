//! Chat-completions style JSON over HTTP.

use serde_json::{json, Value};

use super::{Backend, ChatRequest, ChatResult, GatewayConfig, GatewayError, TokenLogprob};

pub struct HttpBackend {
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(cfg: &GatewayConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(cfg.timeout()).build();
        HttpBackend { agent }
    }

    fn url(cfg: &GatewayConfig, endpoint: &str) -> String {
        format!("{}/{endpoint}", cfg.base_url.trim_end_matches('/'))
    }

    fn authorize(cfg: &GatewayConfig, req: ureq::Request) -> ureq::Request {
        match std::env::var(&cfg.api_key_env) {
            Ok(key) if !key.is_empty() => req.set("Authorization", &format!("Bearer {key}")),
            _ => req,
        }
    }

    fn post(&self, cfg: &GatewayConfig, endpoint: &str, body: Value) -> Result<Value, GatewayError> {
        let req = Self::authorize(cfg, self.agent.post(&Self::url(cfg, endpoint)));
        let resp = req.send_json(body).map_err(map_error)?;
        let text = resp.into_string().map_err(|e| GatewayError::Transport(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| GatewayError::MalformedResponse(e.to_string()))
    }
}

fn map_error(e: ureq::Error) -> GatewayError {
    match e {
        ureq::Error::Status(code, _) => GatewayError::HttpStatus(code),
        ureq::Error::Transport(t) => {
            let msg = t.to_string();
            let timed_out = std::error::Error::source(&t)
                .and_then(|s| s.downcast_ref::<std::io::Error>())
                .is_some_and(|io| matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock));
            if timed_out || msg.contains("timed out") {
                GatewayError::Timeout
            } else {
                GatewayError::Transport(msg)
            }
        }
    }
}

fn malformed(what: &str) -> GatewayError {
    GatewayError::MalformedResponse(what.into())
}

/// `choices[0].message.content`, with optional `choices[0].logprobs.content`.
pub(crate) fn parse_chat_response(v: &Value) -> Result<ChatResult, GatewayError> {
    let choice = v.get("choices").and_then(|c| c.get(0)).ok_or_else(|| malformed("missing choices[0]"))?;
    let message = choice.get("message").ok_or_else(|| malformed("missing choices[0].message"))?;
    let text = match message.get("content") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) => String::new(),
        _ => return Err(malformed("missing choices[0].message.content")),
    };
    let token_logprobs = choice.get("logprobs").and_then(|l| l.get("content")).and_then(Value::as_array).map(|items| {
        items
            .iter()
            .filter_map(|it| {
                Some(TokenLogprob { token: it.get("token")?.as_str()?.into(), logprob: it.get("logprob")?.as_f64()? })
            })
            .collect()
    });
    Ok(ChatResult { text, token_logprobs })
}

/// `data[i].embedding`, reordered by `data[i].index` when present.
pub(crate) fn parse_embedding_response(v: &Value) -> Result<Vec<Vec<f64>>, GatewayError> {
    let data = v.get("data").and_then(Value::as_array).ok_or_else(|| malformed("missing data"))?;
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(data.len());
    for (pos, item) in data.iter().enumerate() {
        let index = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
        let vector = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed("missing data[].embedding"))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| malformed("non-numeric embedding component")))
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push((index, vector));
    }
    rows.sort_by_key(|(i, _)| *i);
    Ok(rows.into_iter().map(|(_, v)| v).collect())
}

/// `choices[0].logprobs.{tokens, token_logprobs}` of an echoed completion.
/// Tokens without a logprob (the first one, on most servers) are skipped.
pub(crate) fn parse_logprob_response(v: &Value) -> Result<Vec<TokenLogprob>, GatewayError> {
    let lp = v
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("logprobs"))
        .filter(|l| !l.is_null())
        .ok_or(GatewayError::Unsupported("logprobs"))?;
    let tokens = lp.get("tokens").and_then(Value::as_array).ok_or_else(|| malformed("missing logprobs.tokens"))?;
    let values = lp
        .get("token_logprobs")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("missing logprobs.token_logprobs"))?;
    if tokens.len() != values.len() {
        return Err(malformed("tokens and token_logprobs differ in length"));
    }
    Ok(tokens
        .iter()
        .zip(values)
        .filter_map(|(t, l)| Some(TokenLogprob { token: t.as_str()?.into(), logprob: l.as_f64()? }))
        .collect())
}

impl Backend for HttpBackend {
    fn chat(&self, cfg: &GatewayConfig, req: &ChatRequest) -> Result<ChatResult, GatewayError> {
        let mut body = json!({
            "model": cfg.model,
            "messages": req.messages,
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
        });
        if let Some(key) = &req.key {
            body["user"] = json!(key);
        }
        parse_chat_response(&self.post(cfg, "chat/completions", body)?)
    }

    fn embed(&self, cfg: &GatewayConfig, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let body = json!({ "model": cfg.embedding_model(), "input": texts });
        parse_embedding_response(&self.post(cfg, "embeddings", body)?)
    }

    fn logprobs(&self, cfg: &GatewayConfig, text: &str) -> Result<Vec<TokenLogprob>, GatewayError> {
        let body = json!({
            "model": cfg.model,
            "prompt": text,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
            "temperature": 0.0,
        });
        match self.post(cfg, "completions", body) {
            Err(GatewayError::HttpStatus(404 | 501)) => Err(GatewayError::Unsupported("logprobs")),
            other => parse_logprob_response(&other?),
        }
    }

    fn probe(&self, cfg: &GatewayConfig) -> Result<(), GatewayError> {
        let req = Self::authorize(cfg, self.agent.get(&Self::url(cfg, "models")));
        match req.call() {
            Ok(_) | Err(ureq::Error::Status(..)) => Ok(()),
            Err(e) => Err(map_error(e)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chat_parsing() {
        let v = json!({"choices":[{"message":{"role":"assistant","content":"hi"}}]});
        assert_eq!(parse_chat_response(&v).unwrap().text, "hi");
        let v = json!({"choices":[{"message":{"content":null}}]});
        assert_eq!(parse_chat_response(&v).unwrap().text, "");
        assert!(matches!(parse_chat_response(&json!({"x":1})), Err(GatewayError::MalformedResponse(_))));
    }

    #[test]
    fn embedding_parsing_reorders() {
        let v = json!({"data":[{"index":1,"embedding":[0.0,1.0]},{"index":0,"embedding":[1.0,0.0]}]});
        assert_eq!(parse_embedding_response(&v).unwrap(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let v = json!({"data":[{"embedding":["x"]}]});
        assert!(parse_embedding_response(&v).is_err());
    }

    #[test]
    fn logprob_parsing() {
        let v = json!({"choices":[{"logprobs":{"tokens":["a","b"],"token_logprobs":[null,-0.5]}}]});
        assert_eq!(parse_logprob_response(&v).unwrap(), vec![TokenLogprob { token: "b".into(), logprob: -0.5 }]);
        let v = json!({"choices":[{"text":""}]});
        assert_eq!(parse_logprob_response(&v), Err(GatewayError::Unsupported("logprobs")));
    }
}
