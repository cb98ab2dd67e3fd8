//! Loopback HTTP server speaking the gateway wire format on top of a
//! [`MockBackend`].

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::{json, Value};
use tiny_http::{Header, Method, Request, Response, Server};

use crate::gateway::{Backend, ChatRequest, GatewayConfig, GatewayError, Message, MockBackend};

pub struct MockServer {
    server: Arc<Server>,
    workers: Vec<JoinHandle<()>>,
    backend: Arc<MockBackend>,
}

impl MockServer {
    /// Binds `127.0.0.1:port` (0 picks a free port) and starts `threads` workers.
    pub fn start(port: u16, backend: Arc<MockBackend>, threads: usize) -> std::io::Result<MockServer> {
        let server = Server::http(("127.0.0.1", port)).map_err(std::io::Error::other)?;
        let server = Arc::new(server);
        let workers = (0..threads.max(1))
            .map(|_| {
                let server = Arc::clone(&server);
                let backend = Arc::clone(&backend);
                std::thread::spawn(move || {
                    while let Ok(req) = server.recv() {
                        handle(&backend, req);
                    }
                })
            })
            .collect();
        Ok(MockServer { server, workers, backend })
    }

    pub fn addr(&self) -> SocketAddr {
        self.server.server_addr().to_ip().expect("bound to an IP address")
    }

    /// Base URL for [`GatewayConfig::base_url`].
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr())
    }

    pub fn backend(&self) -> &Arc<MockBackend> {
        &self.backend
    }

    /// Blocks until the server is shut down from another thread.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn respond(req: Request, status: u16, body: Value) {
    let header = Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header");
    let resp = Response::from_string(body.to_string()).with_status_code(status).with_header(header);
    if let Err(e) = req.respond(resp) {
        log::debug!("mock server failed to respond: {e}");
    }
}

fn error_body(message: &str) -> Value {
    json!({ "error": { "message": message } })
}

fn handle(backend: &MockBackend, mut req: Request) {
    let path = req.url().split('?').next().unwrap_or("").trim_end_matches('/').to_string();
    let route = path.strip_prefix("/v1").unwrap_or(&path).to_string();
    let method = req.method().clone();

    if method == Method::Get {
        match route.as_str() {
            "/models" => respond(req, 200, json!({ "object": "list", "data": [{ "id": "mock", "object": "model" }] })),
            "/mock/stats" => respond(req, 200, json!({ "chat_requests": backend.chat_calls() })),
            _ => respond(req, 404, error_body("not found")),
        }
        return;
    }
    if method != Method::Post {
        respond(req, 405, error_body("method not allowed"));
        return;
    }

    let mut raw = String::new();
    if req.as_reader().read_to_string(&mut raw).is_err() {
        respond(req, 400, error_body("unreadable body"));
        return;
    }
    let body: Value = match serde_json::from_str(&raw) {
        Ok(v) => v,
        Err(e) => {
            respond(req, 400, error_body(&e.to_string()));
            return;
        }
    };

    let cfg = GatewayConfig::default();
    let result = match route.as_str() {
        "/chat/completions" => chat(backend, &cfg, &body),
        "/embeddings" => embeddings(backend, &cfg, &body),
        "/completions" => completions(backend, &cfg, &body),
        _ => Err((404, "not found".to_string())),
    };
    match result {
        Ok(v) => respond(req, 200, v),
        Err((status, msg)) => respond(req, status, error_body(&msg)),
    }
}

fn backend_error(e: GatewayError) -> (u16, String) {
    match e {
        GatewayError::HttpStatus(code) => (code, "injected failure".into()),
        other => (500, other.to_string()),
    }
}

fn chat(backend: &MockBackend, cfg: &GatewayConfig, body: &Value) -> Result<Value, (u16, String)> {
    let messages: Vec<Message> = body
        .get("messages")
        .cloned()
        .ok_or((400, "missing messages".to_string()))
        .and_then(|m| serde_json::from_value(m).map_err(|e| (400, e.to_string())))?;
    if messages.is_empty() {
        return Err((400, "messages must be non-empty".into()));
    }
    let key = body.get("user").and_then(Value::as_str).map(String::from);
    let result = backend.chat(cfg, &ChatRequest { messages, key }).map_err(backend_error)?;
    Ok(json!({
        "object": "chat.completion",
        "model": body.get("model").cloned().unwrap_or(Value::Null),
        "choices": [{ "index": 0, "message": { "role": "assistant", "content": result.text }, "finish_reason": "stop" }],
    }))
}

fn embeddings(backend: &MockBackend, cfg: &GatewayConfig, body: &Value) -> Result<Value, (u16, String)> {
    let input: Vec<String> = match body.get("input") {
        Some(Value::String(s)) => vec![s.clone()],
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| (400, e.to_string()))?,
        None => return Err((400, "missing input".into())),
    };
    let vectors = backend.embed(cfg, &input).map_err(backend_error)?;
    let data: Vec<Value> = vectors
        .into_iter()
        .enumerate()
        .map(|(i, v)| json!({ "object": "embedding", "index": i, "embedding": v }))
        .collect();
    Ok(json!({ "object": "list", "data": data }))
}

fn completions(backend: &MockBackend, cfg: &GatewayConfig, body: &Value) -> Result<Value, (u16, String)> {
    let prompt = body.get("prompt").and_then(Value::as_str).ok_or((400, "missing prompt".to_string()))?;
    match backend.logprobs(cfg, prompt) {
        Ok(lp) => {
            let tokens: Vec<&str> = lp.iter().map(|t| t.token.as_str()).collect();
            let values: Vec<f64> = lp.iter().map(|t| t.logprob).collect();
            Ok(json!({
                "object": "text_completion",
                "choices": [{ "index": 0, "text": prompt, "logprobs": { "tokens": tokens, "token_logprobs": values } }],
            }))
        }
        Err(GatewayError::Unsupported(_)) => {
            Ok(json!({ "object": "text_completion", "choices": [{ "index": 0, "text": prompt, "logprobs": null }] }))
        }
        Err(e) => Err(backend_error(e)),
    }
}
