//! Chat-completion gateway with replay, recording, remote and simulated
//! backends, plus per-call token accounting.

mod canonical;
mod fixture;
mod ledger;
mod remote;

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use canonical::{canonicalize, request_key};
pub use fixture::{FixtureFile, FixtureRecord, RecordingBackend, ScriptedBackend, Strictness, FIXTURE_SCHEMA};
pub use ledger::{reduction_report, LedgerEntry, ReductionReport, ReductionRow, TokenLedger, Usage};
pub use remote::{RemoteBackend, RemoteConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentTag {
    React,
    Summarizer,
    Concluder,
    Translator,
    Builder,
    Analyzer,
    Executor,
    Grounder,
    Mllm,
}

impl AgentTag {
    pub const ALL: [AgentTag; 9] = [
        AgentTag::React,
        AgentTag::Summarizer,
        AgentTag::Concluder,
        AgentTag::Translator,
        AgentTag::Builder,
        AgentTag::Analyzer,
        AgentTag::Executor,
        AgentTag::Grounder,
        AgentTag::Mllm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentTag::React => "react",
            AgentTag::Summarizer => "summarizer",
            AgentTag::Concluder => "concluder",
            AgentTag::Translator => "translator",
            AgentTag::Builder => "builder",
            AgentTag::Analyzer => "analyzer",
            AgentTag::Executor => "executor",
            AgentTag::Grounder => "grounder",
            AgentTag::Mllm => "mllm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Building,
    Verification,
    Testing,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Building, Phase::Verification, Phase::Testing];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Building => "building",
            Phase::Verification => "verification",
            Phase::Testing => "testing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message { role: Role::Assistant, content: content.into() }
    }

    pub fn tool(content: impl Into<String>) -> Self {
        Message { role: Role::Tool, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams { temperature: 0.0, max_tokens: 2048 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub agent_tag: AgentTag,
    pub messages: Vec<Message>,
    pub decode: DecodeParams,
}

impl ChatRequest {
    pub fn new(agent_tag: AgentTag, messages: Vec<Message>) -> Self {
        ChatRequest { agent_tag, messages, decode: DecodeParams::default() }
    }

    /// Content of the last user or tool message.
    pub fn last_input(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| matches!(m.role, Role::User | Role::Tool))
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    pub fn system_prompt(&self) -> &str {
        self.messages.iter().find(|m| m.role == Role::System).map(|m| m.content.as_str()).unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Counts came from [`estimate_tokens`] rather than a tokenizer.
    #[serde(default)]
    pub estimated: bool,
}

/// A backend answer together with its (recorded or measured) latency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub response: ChatResponse,
    pub latency_ms: u64,
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("fixture mismatch for {agent} request at line {line}:\n  expected: {expected}\n  actual:   {actual}")]
    FixtureMismatch { agent: String, line: usize, expected: String, actual: String },
    #[error("fixture exhausted: no recorded response left for {agent} request")]
    FixtureExhausted { agent: String },
    #[error("fixture file {path}: {msg}")]
    FixtureFormat { path: String, msg: String },
    #[error("remote error: HTTP {status}: {body}")]
    RemoteError { status: u16, body: String },
    #[error("request timed out after {0} ms")]
    Timeout(u64),
    #[error("remote backend misconfigured: {0}")]
    Config(String),
    #[error("react testing total is zero")]
    DivisionByZero,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Anything that can answer a chat request.
pub trait Backend: Send {
    fn complete(&mut self, req: &ChatRequest, canonical: &str, key: &str) -> Result<Reply, LlmError>;

    /// Flushes any buffered output (recordings).
    fn finish(&mut self) -> Result<(), LlmError> {
        Ok(())
    }
}

/// Produces response text for a request; used by [`SimulatedBackend`].
pub trait Responder: Send {
    fn respond(&mut self, req: &ChatRequest) -> String;
}

/// Answers with a local [`Responder`]; token counts are always estimated and
/// latency is modeled from the completion size.
pub struct SimulatedBackend {
    responder: Box<dyn Responder>,
}

impl SimulatedBackend {
    pub fn new(responder: Box<dyn Responder>) -> Self {
        SimulatedBackend { responder }
    }
}

impl Backend for SimulatedBackend {
    fn complete(&mut self, req: &ChatRequest, _canonical: &str, _key: &str) -> Result<Reply, LlmError> {
        let content = self.responder.respond(req);
        let prompt: u64 = req.messages.iter().map(|m| estimate_tokens(&m.content)).sum();
        let completion = estimate_tokens(&content);
        let latency_ms = 400 + 15 * completion + prompt / 10;
        Ok(Reply {
            response: ChatResponse { content, prompt_tokens: prompt, completion_tokens: completion, estimated: true },
            latency_ms,
        })
    }
}

/// Whitespace-chunk token estimate: `round(chunks * 1.3)`.
pub fn estimate_tokens(text: &str) -> u64 {
    let chunks = text.split_whitespace().count() as u64;
    // integer form of round(chunks * 1.3)
    (chunks * 13 + 5) / 10
}

/// Routes requests to one backend and records every call in a ledger.
/// Safe to share between threads; calls are serialized.
pub struct Gateway {
    backend: Mutex<Box<dyn Backend>>,
    ledger: Mutex<TokenLedger>,
    phase: Mutex<Phase>,
}

impl Gateway {
    pub fn new(backend: Box<dyn Backend>) -> Self {
        Gateway { backend: Mutex::new(backend), ledger: Mutex::new(TokenLedger::default()), phase: Mutex::new(Phase::Building) }
    }

    pub fn set_phase(&self, phase: Phase) {
        *self.phase.lock().expect("phase lock") = phase;
    }

    pub fn phase(&self) -> Phase {
        *self.phase.lock().expect("phase lock")
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let canonical = canonicalize(req);
        let key = request_key(&canonical);
        let reply = self.backend.lock().expect("backend lock").complete(req, &canonical, &key)?;
        let phase = self.phase();
        self.ledger.lock().expect("ledger lock").push(LedgerEntry {
            agent_tag: req.agent_tag,
            phase,
            prompt_tokens: reply.response.prompt_tokens,
            completion_tokens: reply.response.completion_tokens,
            wall_time_ms: reply.latency_ms,
            estimated: reply.response.estimated,
        });
        Ok(reply.response)
    }

    pub fn ledger(&self) -> TokenLedger {
        self.ledger.lock().expect("ledger lock").clone()
    }

    pub fn finish(&self) -> Result<(), LlmError> {
        self.backend.lock().expect("backend lock").finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimator_rounds() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("a"), 1);
        assert_eq!(estimate_tokens("a b"), 3);
        assert_eq!(estimate_tokens("a b c d e"), 7);
        assert_eq!(estimate_tokens(" a\n\tb  c "), 4);
    }

    #[test]
    fn agent_tags_parse() {
        for a in AgentTag::ALL {
            assert_eq!(AgentTag::parse(a.as_str()), Some(a));
        }
    }
}
