//! OpenAI-compatible `/chat/completions` client.
//!
//! Request body: `{"model", "messages": [{"role", "content"}], "temperature",
//! "max_tokens"}`; tool messages are sent with role `user` and a
//! `[tool result]` prefix since no tool-call ids are tracked. Response:
//! `choices[0].message.content` and `usage.{prompt,completion}_tokens`.

use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{estimate_tokens, Backend, ChatRequest, ChatResponse, LlmError, Reply, Role};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL, e.g. `https://api.example.com/v1`.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_key_env() -> String {
    "AUTORPA_API_KEY".into()
}

fn default_timeout() -> u64 {
    60_000
}

fn default_retries() -> u32 {
    4
}

pub struct RemoteBackend {
    cfg: RemoteConfig,
    token: Option<String>,
    agent: ureq::Agent,
    /// Base delay between 429 retries.
    backoff: Duration,
}

impl RemoteBackend {
    pub fn new(cfg: RemoteConfig) -> Result<Self, LlmError> {
        if cfg.endpoint.trim().is_empty() {
            return Err(LlmError::Config("remote backend requires an endpoint".into()));
        }
        let token = std::env::var(&cfg.api_key_env).ok();
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteBackend { cfg, token, agent, backoff: Duration::from_millis(500) })
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.cfg.endpoint.trim_end_matches('/'))
    }

    fn body(&self, req: &ChatRequest) -> serde_json::Value {
        let messages: Vec<_> = req
            .messages
            .iter()
            .map(|m| match m.role {
                Role::Tool => json!({"role": "user", "content": format!("[tool result]\n{}", m.content)}),
                r => json!({"role": r.as_str(), "content": m.content}),
            })
            .collect();
        json!({
            "model": self.cfg.model,
            "messages": messages,
            "temperature": req.decode.temperature,
            "max_tokens": req.decode.max_tokens,
        })
    }
}

fn excerpt(s: &str) -> String {
    s.chars().take(300).collect()
}

impl Backend for RemoteBackend {
    fn complete(&mut self, req: &ChatRequest, _canonical: &str, _key: &str) -> Result<Reply, LlmError> {
        let body = self.body(req);
        let started = Instant::now();
        let mut attempt = 0;
        loop {
            let mut call = self.agent.post(&self.url()).header("Content-Type", "application/json");
            if let Some(t) = &self.token {
                call = call.header("Authorization", &format!("Bearer {t}"));
            }
            let mut resp = match call.send_json(&body) {
                Ok(r) => r,
                Err(ureq::Error::Timeout(_)) => return Err(LlmError::Timeout(self.cfg.timeout_ms)),
                Err(e) => return Err(LlmError::RemoteError { status: 0, body: e.to_string() }),
            };
            let status = resp.status().as_u16();
            if status == 429 && attempt < self.cfg.max_retries {
                let wait = resp
                    .headers()
                    .get("retry-after")
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.trim().parse::<u64>().ok())
                    .map(Duration::from_secs)
                    .unwrap_or(self.backoff * 2u32.pow(attempt));
                log::warn!("remote: 429, retrying in {wait:?}");
                thread::sleep(wait);
                attempt += 1;
                continue;
            }
            let text = match resp.body_mut().read_to_string() {
                Ok(t) => t,
                Err(ureq::Error::Timeout(_)) => return Err(LlmError::Timeout(self.cfg.timeout_ms)),
                Err(e) => return Err(LlmError::RemoteError { status, body: e.to_string() }),
            };
            if !(200..300).contains(&status) {
                return Err(LlmError::RemoteError { status, body: excerpt(&text) });
            }
            let v: serde_json::Value =
                serde_json::from_str(&text).map_err(|_| LlmError::RemoteError { status, body: excerpt(&text) })?;
            let content = v["choices"][0]["message"]["content"]
                .as_str()
                .ok_or_else(|| LlmError::RemoteError { status, body: excerpt(&text) })?
                .to_string();
            let usage = (v["usage"]["prompt_tokens"].as_u64(), v["usage"]["completion_tokens"].as_u64());
            let response = match usage {
                (Some(p), Some(c)) => ChatResponse { content, prompt_tokens: p, completion_tokens: c, estimated: false },
                _ => {
                    let p = req.messages.iter().map(|m| estimate_tokens(&m.content)).sum();
                    let c = estimate_tokens(&content);
                    ChatResponse { content, prompt_tokens: p, completion_tokens: c, estimated: true }
                }
            };
            return Ok(Reply { response, latency_ms: started.elapsed().as_millis() as u64 });
        }
    }
}
