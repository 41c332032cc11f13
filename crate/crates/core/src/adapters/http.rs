use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::Engine;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::ratelimit::TokenBucket;
use super::replay::ReplayEntry;
use super::{check_prompt, AskError, Backend, Probe, Reply};

/// Connection settings for a chat-completions endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelEndpointConfig {
    /// Either the API root (`…/v1`) or the full `…/chat/completions` URL.
    pub base_url: String,
    /// Environment variable holding the bearer token; no auth header if unset.
    pub auth_token_env: Option<String>,
    pub model_name: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub parallelism: usize,
    pub temperature: f64,
    pub max_reply_tokens: u32,
    /// First retry delay; doubles on every further attempt.
    pub backoff_base_ms: u64,
    /// Requests per second across all workers.
    pub rate_limit: Option<f64>,
    /// JSONL file receiving one request/response entry per attempt.
    pub replay_log: Option<PathBuf>,
}

impl Default for ModelEndpointConfig {
    fn default() -> Self {
        ModelEndpointConfig {
            base_url: "http://127.0.0.1:8000/v1".into(),
            auth_token_env: None,
            model_name: "default".into(),
            timeout_secs: 60.0,
            max_retries: 3,
            parallelism: 4,
            temperature: 0.0,
            max_reply_tokens: 32,
            backoff_base_ms: 500,
            rate_limit: None,
            replay_log: None,
        }
    }
}

impl ModelEndpointConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.parallelism < 1 {
            return Err("parallelism must be at least 1".into());
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err("timeout must be positive".into());
        }
        if let Some(r) = self.rate_limit {
            if !(r.is_finite() && r > 0.0) {
                return Err("rate limit must be positive".into());
            }
        }
        Ok(())
    }

    pub fn completions_url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

/// Chat-completions request carrying one PNG as a base64 data URL.
pub fn chat_request_body(model: &str, prompt: &str, png: &[u8], temperature: f64, max_tokens: u32) -> Value {
    let url = format!("data:image/png;base64,{}", base64::engine::general_purpose::STANDARD.encode(png));
    json!({
        "model": model,
        "temperature": temperature,
        "max_tokens": max_tokens,
        "messages": [{
            "role": "user",
            "content": [
                {"type": "image_url", "image_url": {"url": url}},
                {"type": "text", "text": prompt},
            ],
        }],
    })
}

/// Reply text from a chat-completions response body. Accepts string content
/// and content-part arrays.
pub fn parse_chat_reply(body: &str) -> Result<String, AskError> {
    let malformed = |detail: &str| AskError::MalformedResponse { detail: detail.to_string() };
    let v: Value = serde_json::from_str(body).map_err(|e| malformed(&format!("invalid JSON: {e}")))?;
    let content = v
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .ok_or_else(|| malformed("missing choices[0].message.content"))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        _ => Err(malformed("content is neither a string nor a list of parts")),
    }
}

enum Attempt {
    Done(Result<String, AskError>),
    Retry { status: Option<u16>, detail: String },
}

/// Wire-protocol client for vision chat endpoints.
pub struct HttpBackend {
    id: String,
    cfg: ModelEndpointConfig,
    client: reqwest::blocking::Client,
    limiter: Option<Arc<TokenBucket>>,
    log: Option<Mutex<File>>,
}

impl HttpBackend {
    pub fn new(cfg: ModelEndpointConfig) -> Result<HttpBackend, String> {
        cfg.validate()?;
        let timeout = Duration::from_secs_f64(cfg.timeout_secs);
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .connect_timeout(timeout)
            .build()
            .map_err(|e| format!("cannot build HTTP client: {e}"))?;
        let log = match &cfg.replay_log {
            Some(path) => Some(Mutex::new(
                OpenOptions::new().create(true).append(true).open(path).map_err(|e| format!("{}: {e}", path.display()))?,
            )),
            None => None,
        };
        let limiter = cfg.rate_limit.and_then(|r| TokenBucket::new(r, 1)).map(Arc::new);
        Ok(HttpBackend { id: format!("http:{}", cfg.model_name), cfg, client, limiter, log })
    }

    pub fn with_limiter(mut self, limiter: Arc<TokenBucket>) -> Self {
        self.limiter = Some(limiter);
        self
    }

    fn token(&self) -> Result<Option<String>, AskError> {
        match &self.cfg.auth_token_env {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(t) if !t.is_empty() => Ok(Some(t)),
                _ => Err(AskError::AuthMissing { var: var.clone() }),
            },
        }
    }

    fn record(&self, entry: &ReplayEntry) {
        if let Some(log) = &self.log {
            let line = serde_json::to_string(entry).expect("replay entries serialise");
            // a failed log write must not fail the trial
            let _ = writeln!(log.lock().expect("replay log lock poisoned"), "{line}");
        }
    }

    fn attempt(&self, url: &str, body: &Value, token: Option<&str>, trial_id: &str, image_sha256: &str, number: u32) -> Attempt {
        if let Some(l) = &self.limiter {
            l.acquire();
        }
        let mut req = self.client.post(url).header("content-type", "application/json").body(body.to_string());
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        let start = Instant::now();
        let result = req.send().and_then(|r| {
            let status = r.status().as_u16();
            r.text().map(|t| (status, t))
        });
        let latency_ms = start.elapsed().as_millis() as u64;
        let (status, text) = match result {
            Ok(ok) => ok,
            Err(e) => {
                let detail = if e.is_timeout() {
                    format!("no response within {}s", self.cfg.timeout_secs)
                } else if e.is_connect() {
                    format!("cannot connect: {e}")
                } else {
                    e.to_string()
                };
                self.record(&ReplayEntry::new(trial_id, number, image_sha256, None, None, latency_ms, Some(detail.clone())));
                return Attempt::Retry { status: None, detail };
            }
        };
        self.record(&ReplayEntry::new(trial_id, number, image_sha256, Some(status), Some(text.clone()), latency_ms, None));
        match status {
            200..=299 => Attempt::Done(parse_chat_reply(&text)),
            429 | 500..=599 => Attempt::Retry { status: Some(status), detail: format!("HTTP {status}") },
            code => Attempt::Done(Err(AskError::HttpStatus { code, attempts: number })),
        }
    }

    fn backoff(&self, retry: u32) -> Duration {
        let base = self.cfg.backoff_base_ms.saturating_mul(1 << retry.min(16));
        let jitter = if self.cfg.backoff_base_ms > 0 { rand::rng().random_range(0..=self.cfg.backoff_base_ms) } else { 0 };
        Duration::from_millis(base + jitter)
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn ask(&self, probe: &Probe<'_>) -> Result<Reply, AskError> {
        check_prompt(probe)?;
        let token = self.token()?;
        let png = probe.png().map_err(|e| AskError::InvalidProbe { detail: e.to_string() })?;
        let image_sha256 = format!("{:x}", Sha256::digest(&png));
        let body = chat_request_body(&self.cfg.model_name, &probe.trial.prompt, &png, self.cfg.temperature, self.cfg.max_reply_tokens);
        let url = self.cfg.completions_url();
        let start = Instant::now();
        let total = self.cfg.max_retries + 1;
        let mut last = (None, String::new());
        for n in 1..=total {
            match self.attempt(&url, &body, token.as_deref(), &probe.trial.trial_id, &image_sha256, n) {
                Attempt::Done(Ok(text)) => {
                    return Ok(Reply { text, latency_ms: start.elapsed().as_millis() as u64, attempt_count: n, backend_id: self.id.clone() });
                }
                Attempt::Done(Err(e)) => return Err(e),
                Attempt::Retry { status, detail } => {
                    last = (status, detail);
                    if n < total {
                        std::thread::sleep(self.backoff(n - 1));
                    }
                }
            }
        }
        Err(match last.0 {
            Some(code) => AskError::HttpStatus { code, attempts: total },
            None => AskError::Timeout { attempts: total, detail: last.1 },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_schema() {
        let body = chat_request_body("m", "What?", &[1, 2, 3], 0.0, 32);
        assert_eq!(body["model"], "m");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["max_tokens"], 32);
        let parts = body["messages"][0]["content"].as_array().unwrap();
        assert_eq!(parts[0]["image_url"]["url"], "data:image/png;base64,AQID");
        assert_eq!(parts[1], json!({"type": "text", "text": "What?"}));
    }

    #[test]
    fn reply_parsing() {
        assert_eq!(parse_chat_reply(r#"{"choices":[{"message":{"content":"593"}}]}"#).unwrap(), "593");
        let parts = r#"{"choices":[{"message":{"content":[{"type":"text","text":"59"},{"type":"text","text":"3"}]}}]}"#;
        assert_eq!(parse_chat_reply(parts).unwrap(), "593");
        assert!(matches!(parse_chat_reply("not json"), Err(AskError::MalformedResponse { .. })));
        assert!(matches!(parse_chat_reply(r#"{"choices":[]}"#), Err(AskError::MalformedResponse { .. })));
    }

    #[test]
    fn url_forms() {
        let mut c = ModelEndpointConfig { base_url: "http://h:1/v1/".into(), ..Default::default() };
        assert_eq!(c.completions_url(), "http://h:1/v1/chat/completions");
        c.base_url = "http://h:1/v1/chat/completions".into();
        assert_eq!(c.completions_url(), "http://h:1/v1/chat/completions");
    }

    #[test]
    fn config_validation() {
        assert!(ModelEndpointConfig { parallelism: 0, ..Default::default() }.validate().is_err());
        assert!(ModelEndpointConfig { timeout_secs: 0.0, ..Default::default() }.validate().is_err());
        assert!(ModelEndpointConfig::default().validate().is_ok());
    }
}
