//! Line-delimited fixture files and the replay/record backends.
//!
//! Layout: a header object `{"schema": "autorpa-fixture", "version": 1}`
//! followed by one [`FixtureRecord`] per line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{estimate_tokens, Backend, ChatRequest, ChatResponse, LlmError, Reply};

pub const FIXTURE_SCHEMA: &str = "autorpa-fixture";
const FIXTURE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredResponse {
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub estimated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub key: String,
    pub agent: String,
    /// Canonical request text, kept for mismatch diffs.
    pub request: String,
    pub response: StoredResponse,
    #[serde(default)]
    pub latency_ms: u64,
}

impl FixtureRecord {
    /// Stored response, filling missing token counts with the estimator.
    fn to_response(&self) -> ChatResponse {
        let mut estimated = self.response.estimated;
        let prompt_tokens = self.response.prompt_tokens.unwrap_or_else(|| {
            estimated = true;
            estimate_tokens(&self.request)
        });
        let completion_tokens = self.response.completion_tokens.unwrap_or_else(|| {
            estimated = true;
            estimate_tokens(&self.response.content)
        });
        ChatResponse { content: self.response.content.clone(), prompt_tokens, completion_tokens, estimated }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FixtureFile {
    pub records: Vec<FixtureRecord>,
}

impl FixtureFile {
    pub fn parse(text: &str, path: &str) -> Result<Self, LlmError> {
        let err = |msg: String| LlmError::FixtureFormat { path: path.to_string(), msg };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| err("missing header".into()))?;
        let header: Header = serde_json::from_str(first).map_err(|e| err(format!("bad header: {e}")))?;
        if header.schema != FIXTURE_SCHEMA || header.version != FIXTURE_VERSION {
            return Err(err(format!("unsupported schema {} v{}", header.schema, header.version)));
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            records.push(serde_json::from_str(line).map_err(|e| err(format!("line {}: {e}", i + 1)))?);
        }
        Ok(FixtureFile { records })
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let header = Header { schema: FIXTURE_SCHEMA.into(), version: FIXTURE_VERSION };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Writes via a temporary file and rename.
    pub fn save(&self, path: &Path) -> Result<(), LlmError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(self.to_text().as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strictness {
    /// Every request must match a stored key.
    Exact,
    /// Responses are served in order; keys are only logged.
    Ordered,
}

/// Replays a fixture file.
pub struct ScriptedBackend {
    records: Vec<FixtureRecord>,
    used: Vec<bool>,
    cursor: usize,
    strictness: Strictness,
}

impl ScriptedBackend {
    pub fn new(file: FixtureFile, strictness: Strictness) -> Self {
        let n = file.records.len();
        ScriptedBackend { records: file.records, used: vec![false; n], cursor: 0, strictness }
    }

    pub fn remaining(&self) -> usize {
        self.used.iter().filter(|u| !**u).count()
    }

    fn next_unused(&self) -> Option<usize> {
        (self.cursor..self.records.len()).find(|i| !self.used[*i])
    }
}

/// First line at which two canonical requests differ (1-based).
fn first_difference(expected: &str, actual: &str) -> (usize, String, String) {
    let mut e = expected.lines();
    let mut a = actual.lines();
    let mut n = 0;
    loop {
        n += 1;
        match (e.next(), a.next()) {
            (Some(x), Some(y)) if x == y => continue,
            (None, None) => return (n, String::new(), String::new()),
            (x, y) => {
                return (n, x.unwrap_or("<end>").to_string(), y.unwrap_or("<end>").to_string());
            }
        }
    }
}

impl Backend for ScriptedBackend {
    fn complete(&mut self, req: &ChatRequest, canonical: &str, key: &str) -> Result<Reply, LlmError> {
        let agent = req.agent_tag.as_str().to_string();
        let idx = match self.strictness {
            Strictness::Exact => {
                match (self.cursor..self.records.len()).find(|i| !self.used[*i] && self.records[*i].key == key) {
                    Some(i) => i,
                    None => {
                        let Some(next) = self.next_unused() else {
                            return Err(LlmError::FixtureExhausted { agent });
                        };
                        let (line, expected, actual) = first_difference(&self.records[next].request, canonical);
                        return Err(LlmError::FixtureMismatch { agent, line, expected, actual });
                    }
                }
            }
            Strictness::Ordered => {
                let Some(i) = self.next_unused() else {
                    return Err(LlmError::FixtureExhausted { agent });
                };
                if self.records[i].key != key {
                    log::warn!("ordered fixture: {agent} request key differs from record {i}");
                }
                i
            }
        };
        self.used[idx] = true;
        while self.cursor < self.used.len() && self.used[self.cursor] {
            self.cursor += 1;
        }
        let r = &self.records[idx];
        Ok(Reply { response: r.to_response(), latency_ms: r.latency_ms })
    }
}

/// Forwards to an inner backend and writes every exchange to a new fixture.
pub struct RecordingBackend {
    inner: Box<dyn Backend>,
    path: PathBuf,
    file: FixtureFile,
}

impl RecordingBackend {
    pub fn new(inner: Box<dyn Backend>, path: impl Into<PathBuf>) -> Self {
        RecordingBackend { inner, path: path.into(), file: FixtureFile::default() }
    }
}

impl Backend for RecordingBackend {
    fn complete(&mut self, req: &ChatRequest, canonical: &str, key: &str) -> Result<Reply, LlmError> {
        let reply = self.inner.complete(req, canonical, key)?;
        self.file.records.push(FixtureRecord {
            key: key.to_string(),
            agent: req.agent_tag.as_str().to_string(),
            request: canonical.to_string(),
            response: StoredResponse {
                content: reply.response.content.clone(),
                prompt_tokens: Some(reply.response.prompt_tokens),
                completion_tokens: Some(reply.response.completion_tokens),
                estimated: reply.response.estimated,
            },
            latency_ms: reply.latency_ms,
        });
        Ok(reply)
    }

    fn finish(&mut self) -> Result<(), LlmError> {
        self.inner.finish()?;
        self.file.save(&self.path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{canonicalize, request_key, AgentTag, Gateway, Message, Responder, SimulatedBackend};

    struct Echo;

    impl Responder for Echo {
        fn respond(&mut self, req: &ChatRequest) -> String {
            format!("echo {}", req.last_input())
        }
    }

    fn req(text: &str) -> ChatRequest {
        ChatRequest::new(AgentTag::Executor, vec![Message::system("sys"), Message::user(text)])
    }

    fn recorded(texts: &[&str]) -> FixtureFile {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.jsonl");
        let gw = Gateway::new(Box::new(RecordingBackend::new(Box::new(SimulatedBackend::new(Box::new(Echo))), &path)));
        for t in texts {
            gw.complete(&req(t)).unwrap();
        }
        gw.finish().unwrap();
        FixtureFile::load(&path).unwrap()
    }

    #[test]
    fn record_then_replay_exact() {
        let file = recorded(&["a", "b", "a"]);
        assert_eq!(file.records.len(), 3);
        let gw = Gateway::new(Box::new(ScriptedBackend::new(file.clone(), Strictness::Exact)));
        for t in ["a", "b", "a"] {
            let r = gw.complete(&req(t)).unwrap();
            assert_eq!(r.content, format!("echo {t}"));
        }
        assert!(matches!(gw.complete(&req("a")), Err(LlmError::FixtureExhausted { .. })));
        assert_eq!(FixtureFile::parse(&file.to_text(), "x").unwrap(), file);
    }

    #[test]
    fn exact_mode_reports_first_differing_line() {
        let file = recorded(&["first line\nsecond"]);
        let gw = Gateway::new(Box::new(ScriptedBackend::new(file, Strictness::Exact)));
        match gw.complete(&req("first line\nsecond changed")) {
            Err(LlmError::FixtureMismatch { line, expected, actual, .. }) => {
                assert_eq!(expected, "second");
                assert_eq!(actual, "second changed");
                assert_eq!(line, 8);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ordered_mode_ignores_keys() {
        let file = recorded(&["a", "b"]);
        let gw = Gateway::new(Box::new(ScriptedBackend::new(file, Strictness::Ordered)));
        assert_eq!(gw.complete(&req("zzz")).unwrap().content, "echo a");
        assert_eq!(gw.complete(&req("yyy")).unwrap().content, "echo b");
    }

    #[test]
    fn missing_counts_are_estimated() {
        let canonical = canonicalize(&req("one two three"));
        let rec = FixtureRecord {
            key: request_key(&canonical),
            agent: "executor".into(),
            request: canonical,
            response: StoredResponse {
                content: "f(a=1)".into(),
                prompt_tokens: None,
                completion_tokens: Some(9),
                estimated: false,
            },
            latency_ms: 5,
        };
        let gw = Gateway::new(Box::new(ScriptedBackend::new(FixtureFile { records: vec![rec] }, Strictness::Exact)));
        let r = gw.complete(&req("one two three")).unwrap();
        assert!(r.estimated);
        assert_eq!(r.completion_tokens, 9);
        assert!(r.prompt_tokens > 0);
        let l = gw.ledger();
        assert!(l.entries()[0].estimated);
        assert_eq!(l.entries()[0].wall_time_ms, 5);
    }

    #[test]
    fn bad_header_is_rejected() {
        assert!(matches!(FixtureFile::parse("{\"schema\":\"x\",\"version\":1}\n", "p"), Err(LlmError::FixtureFormat { .. })));
        assert!(matches!(FixtureFile::parse("", "p"), Err(LlmError::FixtureFormat { .. })));
    }
}
