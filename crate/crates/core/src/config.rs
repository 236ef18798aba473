//! Run configuration: one TOML file, relative paths resolved against it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bundled;
use crate::env::{EnvError, TaskSet};
use crate::llm::{Backend, FixtureFile, Gateway, LlmError, RecordingBackend, RemoteBackend, RemoteConfig, ScriptedBackend, Strictness};
use crate::matcher::MatcherConfig;
use crate::pipeline::{Mode, PipelineConfig, Sessions};
use crate::sim;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("missing fixture file {0}")]
    MissingFixture(String),
    #[error(transparent)]
    Tasks(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Local rule-based author; no fixtures needed.
    Simulated,
    ScriptedExact,
    ScriptedOrdered,
    /// Runs `record_from` and writes every exchange into the fixtures dir.
    Record,
    Remote,
}

impl BackendKind {
    pub const ALL: [BackendKind; 5] =
        [BackendKind::Simulated, BackendKind::ScriptedExact, BackendKind::ScriptedOrdered, BackendKind::Record, BackendKind::Remote];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Simulated => "simulated",
            BackendKind::ScriptedExact => "scripted_exact",
            BackendKind::ScriptedOrdered => "scripted_ordered",
            BackendKind::Record => "record",
            BackendKind::Remote => "remote",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.as_str() == s)
    }

    pub fn is_scripted(self) -> bool {
        matches!(self, BackendKind::ScriptedExact | BackendKind::ScriptedOrdered)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Task-type file; the bundled task set when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tasks: Option<PathBuf>,
    pub fixtures: PathBuf,
    pub bank: PathBuf,
    /// Where build states are kept between `build` and `test`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builds: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    /// Behaviour of the simulated author.
    #[serde(default = "default_profile")]
    pub profile: String,
    /// Backend wrapped by `record`: `simulated` or `remote`.
    #[serde(default = "default_record_from")]
    pub record_from: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote: Option<RemoteConfig>,
}

fn default_profile() -> String {
    "default".into()
}

fn default_record_from() -> BackendKind {
    BackendKind::Simulated
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub n: usize,
    pub n_ref: u32,
    pub m: u32,
    #[serde(default = "default_tool_cap")]
    pub tool_cap: u32,
    #[serde(default = "default_step_ms")]
    pub step_ms: u64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

fn default_tool_cap() -> u32 {
    crate::agents::DEFAULT_TOOL_CAP
}

fn default_step_ms() -> u64 {
    2_000
}

fn default_lambda() -> f64 {
    1e-4
}

impl Default for PipelineSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        PipelineSection { n: p.n, n_ref: p.n_ref, m: p.m, tool_cap: p.tool_cap, step_ms: p.step_ms, lambda: p.lambda }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Modes {
    #[serde(default)]
    pub code_only: bool,
    #[serde(default)]
    pub unified_translator: bool,
    #[serde(default)]
    pub case_insensitive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSection {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Task types to build and test; all types in the task file when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub task_types: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_success_rate: Option<f64>,
    /// Largest allowed ratio of test tokens to ReAct-baseline tokens.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_token_ratio: Option<f64>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl Default for TestSection {
    fn default() -> Self {
        TestSection { seeds: default_seeds(), task_types: Vec::new(), min_success_rate: None, max_token_ratio: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub paths: Paths,
    pub backend: BackendSection,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub modes: Modes,
    #[serde(default)]
    pub test: TestSection,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base: PathBuf,
}

impl Config {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_string(), msg: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        cfg.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.pipeline.n < 1 {
            return bad("pipeline.n must be at least 1".into());
        }
        if !(self.pipeline.lambda.is_finite() && self.pipeline.lambda >= 0.0) {
            return bad("pipeline.lambda must be a finite non-negative number".into());
        }
        let remote_needed = self.backend.kind == BackendKind::Remote
            || (self.backend.kind == BackendKind::Record && self.backend.record_from == BackendKind::Remote);
        if remote_needed && self.backend.remote.as_ref().is_none_or(|r| r.endpoint.trim().is_empty()) {
            return bad("the remote backend requires backend.remote.endpoint".into());
        }
        if !matches!(self.backend.record_from, BackendKind::Simulated | BackendKind::Remote) {
            return bad("backend.record_from must be simulated or remote".into());
        }
        if sim::Profile::parse(&self.backend.profile).is_none() {
            return bad(format!("unknown simulated profile {:?}", self.backend.profile));
        }
        if self.test.seeds.is_empty() {
            return bad("test.seeds must not be empty".into());
        }
        for (name, v) in [("min_success_rate", self.test.min_success_rate), ("max_token_ratio", self.test.max_token_ratio)] {
            if v.is_some_and(|v| !(v.is_finite() && v >= 0.0)) {
                return bad(format!("test.{name} must be a finite non-negative number"));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn fixtures_dir(&self) -> PathBuf {
        self.resolve(&self.paths.fixtures)
    }

    pub fn bank_dir(&self) -> PathBuf {
        self.resolve(&self.paths.bank)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.paths.output)
    }

    pub fn builds_dir(&self) -> PathBuf {
        match &self.paths.builds {
            Some(b) => self.resolve(b),
            None => self.output_dir().join("builds"),
        }
    }

    pub fn task_set(&self) -> Result<TaskSet, ConfigError> {
        match &self.paths.tasks {
            None => Ok(bundled::task_set()),
            Some(p) => {
                let path = self.resolve(p);
                let text = std::fs::read_to_string(&path).map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
                Ok(TaskSet::from_json(&text)?)
            }
        }
    }

    /// Task types selected for this run, in task-file order.
    pub fn selected_types(&self, tasks: &TaskSet) -> Result<Vec<String>, ConfigError> {
        if self.test.task_types.is_empty() {
            return Ok(tasks.ids().map(str::to_string).collect());
        }
        for t in &self.test.task_types {
            tasks.get(t)?;
        }
        Ok(tasks.ids().filter(|id| self.test.task_types.iter().any(|t| t == id)).map(str::to_string).collect())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            n: self.pipeline.n,
            n_ref: self.pipeline.n_ref,
            m: self.pipeline.m,
            tool_cap: self.pipeline.tool_cap,
            unified_translator: self.modes.unified_translator,
            matcher: MatcherConfig { case_insensitive: self.modes.case_insensitive },
            step_ms: self.pipeline.step_ms,
            lambda: self.pipeline.lambda,
        }
    }

    pub fn test_mode(&self) -> Mode {
        if self.modes.code_only {
            Mode::CodeOnly
        } else {
            Mode::Autorpa
        }
    }

    pub fn fixture_path(&self, task_type_id: &str, session: &str) -> PathBuf {
        self.fixtures_dir().join(task_type_id).join(format!("{session}.jsonl"))
    }

    /// Fails with the first missing fixture when a scripted backend is used.
    pub fn check_fixtures(&self, task_types: &[String], sessions: &[String]) -> Result<(), ConfigError> {
        if !self.backend.kind.is_scripted() {
            return Ok(());
        }
        for t in task_types {
            for s in sessions {
                let p = self.fixture_path(t, s);
                if !p.is_file() {
                    return Err(ConfigError::MissingFixture(p.display().to_string()));
                }
            }
        }
        Ok(())
    }

    /// Short digest naming a run directory: same command and inputs, same
    /// directory.
    pub fn run_stamp(&self, command: &str, extra: &[String]) -> String {
        let mut h = Sha256::new();
        for part in [command, &self.base.display().to_string(), &self.to_toml()].into_iter().chain(extra.iter().map(String::as_str)) {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())[..8].to_string()
    }

    pub fn sessions(&self, tasks: &TaskSet) -> ConfigSessions {
        ConfigSessions { cfg: self.clone(), tasks: tasks.clone() }
    }
}

/// Opens gateways as configured, one per (task type, session).
pub struct ConfigSessions {
    cfg: Config,
    tasks: TaskSet,
}

impl ConfigSessions {
    fn make(&self, kind: BackendKind, task_type_id: &str, session: &str) -> Result<Box<dyn Backend>, LlmError> {
        let b = &self.cfg.backend;
        Ok(match kind {
            BackendKind::Simulated => {
                let profile = sim::Profile::parse(&b.profile).unwrap_or(sim::Profile::Default);
                Box::new(sim::backend(self.tasks.clone(), profile))
            }
            BackendKind::ScriptedExact | BackendKind::ScriptedOrdered => {
                let file = FixtureFile::load(&self.cfg.fixture_path(task_type_id, session))?;
                let strictness = if kind == BackendKind::ScriptedExact { Strictness::Exact } else { Strictness::Ordered };
                Box::new(ScriptedBackend::new(file, strictness))
            }
            BackendKind::Remote => {
                let r = b.remote.clone().ok_or_else(|| LlmError::Config("remote backend requires an endpoint".into()))?;
                Box::new(RemoteBackend::new(r)?)
            }
            BackendKind::Record => {
                let inner = self.make(b.record_from, task_type_id, session)?;
                let path = self.cfg.fixture_path(task_type_id, session);
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                Box::new(RecordingBackend::new(inner, path))
            }
        })
    }
}

impl Sessions for ConfigSessions {
    fn open(&self, task_type_id: &str, session: &str) -> Result<Gateway, LlmError> {
        Ok(Gateway::new(self.make(self.cfg.backend.kind, task_type_id, session)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[paths]\nfixtures = \"fx\"\nbank = \"bank\"\noutput = \"out\"\n\n[backend]\nkind = \"scripted_exact\"\n";

    #[test]
    fn defaults_fill_in() {
        let c = Config::from_toml(MINIMAL, "t").unwrap();
        assert_eq!((c.pipeline.n, c.pipeline.n_ref, c.pipeline.m), (3, 2, 3));
        assert_eq!(c.test.seeds, vec![0]);
        assert_eq!(c.test_mode(), Mode::Autorpa);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let zero_n = format!("{MINIMAL}\n[pipeline]\nn = 0\nn_ref = 2\nm = 3\n");
        assert!(matches!(Config::from_toml(&zero_n, "t"), Err(ConfigError::Invalid(_))));
        let remote = MINIMAL.replace("scripted_exact", "remote");
        assert!(matches!(Config::from_toml(&remote, "t"), Err(ConfigError::Invalid(m)) if m.contains("endpoint")));
        let typo = format!("{MINIMAL}\n[modes]\ncode_onyl = true\n");
        assert!(matches!(Config::from_toml(&typo, "t"), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let mut c = Config::from_toml(MINIMAL, "t").unwrap();
        c.base = PathBuf::from("/etc/runs");
        assert_eq!(c.fixtures_dir(), PathBuf::from("/etc/runs/fx"));
        assert_eq!(c.builds_dir(), PathBuf::from("/etc/runs/out/builds"));
        assert_eq!(c.fixture_path("a", "build"), PathBuf::from("/etc/runs/fx/a/build.jsonl"));
    }
}
