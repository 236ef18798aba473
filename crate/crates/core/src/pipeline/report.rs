//! Testing: running built programs (or ReAct) on fresh instances.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::env::{GuiEnv, TaskSet};
use crate::llm::{reduction_report, Gateway, LlmError, Phase, ReductionReport, TokenLedger, Usage};

use super::episode::{run_react, run_rpa, ReactOptions};
use super::{BuildState, BuildStatus, PipelineConfig, PipelineError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// The verified program where there is one, ReAct otherwise.
    Autorpa,
    /// Programs only, verified or not.
    CodeOnly,
    /// ReAct on every task; the baseline.
    React,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Autorpa => "autorpa",
            Mode::CodeOnly => "code_only",
            Mode::React => "react",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Mode::Autorpa, Mode::CodeOnly, Mode::React].into_iter().find(|m| m.as_str() == s)
    }

    /// Fixture session name used for this mode's test runs.
    pub fn session(self) -> String {
        format!("test-{}", self.as_str())
    }
}

/// How a test row was executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowPath {
    Rpa,
    ReactFallback,
    /// Baseline rows.
    React,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRow {
    pub task_type_id: String,
    pub seed: u64,
    pub instruction: String,
    pub mode: RowPath,
    pub reward: u8,
    pub tokens: BTreeMap<String, Usage>,
    pub tokens_total: u64,
    pub agents: BTreeMap<String, u64>,
    pub env_steps: u32,
    /// Model latency plus a fixed cost per environment step.
    pub wall_time_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Opens a fresh gateway for one (task type, session) pair.
pub trait Sessions: Sync {
    fn open(&self, task_type_id: &str, session: &str) -> Result<Gateway, LlmError>;
}

impl<F> Sessions for F
where
    F: Fn(&str, &str) -> Result<Gateway, LlmError> + Sync,
{
    fn open(&self, task_type_id: &str, session: &str) -> Result<Gateway, LlmError> {
        self(task_type_id, session)
    }
}

/// Runs one test instance on `gw`.
pub fn run_test(
    tasks: &TaskSet,
    build: &BuildState,
    seed: u64,
    mode: Mode,
    gw: &Gateway,
    cfg: &PipelineConfig,
) -> Result<TestRow, PipelineError> {
    gw.set_phase(Phase::Testing);
    let before = gw.ledger().entries().len();
    let mut env = GuiEnv::instantiate(tasks, &build.task_type_id, seed)?;
    let instruction = env.instance().instruction.clone();
    let program = match mode {
        Mode::Autorpa if build.status == BuildStatus::Verified => build.rpa.as_ref(),
        Mode::CodeOnly => build.best_rpa(),
        _ => None,
    };
    let (path, reward, steps, failure) = match (mode, program) {
        (_, Some(rpa)) => {
            let run = run_rpa(gw, cfg, rpa, env)?;
            (RowPath::Rpa, run.reward, run.env.steps_taken(), run.failure())
        }
        (Mode::CodeOnly, None) => (RowPath::Rpa, 0, 0, Some("no program was built for this task type".to_string())),
        (_, None) => {
            let opts = ReactOptions { reflection: None, guidance: None, prior: Vec::new(), translate: false, conclude: false };
            let ep = run_react(gw, cfg, &mut env, opts)?;
            let path = if mode == Mode::React { RowPath::React } else { RowPath::ReactFallback };
            let failure = (ep.reward == 0).then(|| ep.error.unwrap_or_else(|| "the task was not achieved".into()));
            (path, ep.reward, env.steps_taken(), failure)
        }
    };
    let slice = gw.ledger().since(before);
    Ok(row(&build.task_type_id, seed, instruction, path, reward, steps, failure, &slice, cfg))
}

#[allow(clippy::too_many_arguments)]
fn row(
    task_type_id: &str,
    seed: u64,
    instruction: String,
    mode: RowPath,
    reward: u8,
    env_steps: u32,
    failure: Option<String>,
    slice: &TokenLedger,
    cfg: &PipelineConfig,
) -> TestRow {
    let usage = slice.usage();
    TestRow {
        task_type_id: task_type_id.to_string(),
        seed,
        instruction,
        mode,
        reward,
        tokens: slice.by_phase().into_iter().map(|(p, u)| (p.as_str().to_string(), u)).collect(),
        tokens_total: usage.total(),
        agents: slice.by_agent().into_iter().map(|(a, u)| (a.as_str().to_string(), u.total())).collect(),
        env_steps,
        wall_time_ms: usage.wall_time_ms + cfg.step_ms * u64::from(env_steps),
        failure,
    }
}

/// Rows and ledgers of one task type, for the chosen mode and the baseline.
#[derive(Debug, Clone, Default)]
pub struct TypeResult {
    pub rows: Vec<TestRow>,
    pub ledger: TokenLedger,
    pub baseline: Vec<TestRow>,
    pub baseline_ledger: TokenLedger,
}

/// Tests one built task type on `seeds` in `mode` and with the ReAct baseline.
pub fn test_task_type(
    tasks: &TaskSet,
    build: &BuildState,
    seeds: &[u64],
    mode: Mode,
    cfg: &PipelineConfig,
    sessions: &dyn Sessions,
) -> Result<TypeResult, PipelineError> {
    let mut out = TypeResult::default();
    let gw = sessions.open(&build.task_type_id, &mode.session())?;
    for &seed in seeds {
        out.rows.push(run_test(tasks, build, seed, mode, &gw, cfg)?);
    }
    gw.finish()?;
    out.ledger = gw.ledger();
    if mode == Mode::React {
        out.baseline = out.rows.clone();
        out.baseline_ledger = out.ledger.clone();
        return Ok(out);
    }
    let gw = sessions.open(&build.task_type_id, &Mode::React.session())?;
    for &seed in seeds {
        out.baseline.push(run_test(tasks, build, seed, Mode::React, &gw, cfg)?);
    }
    gw.finish()?;
    out.baseline_ledger = gw.ledger();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub rows: Vec<TestRow>,
    pub baseline: Vec<TestRow>,
    pub success_rate: f64,
    pub mean_tokens: f64,
    pub mean_wall_time_ms: f64,
    pub baseline_success_rate: f64,
    pub baseline_mean_tokens: f64,
    pub baseline_mean_wall_time_ms: f64,
    /// Absent when the baseline spent no tokens (for example with no rows).
    pub reduction: Option<ReductionReport>,
    pub lambda: f64,
    /// `(1 - success_rate) + lambda * mean_tokens`.
    pub objective: f64,
}

fn means(rows: &[TestRow]) -> (f64, f64, f64) {
    if rows.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = rows.len() as f64;
    let ok = rows.iter().filter(|r| r.reward == 1).count() as f64;
    let tokens: u64 = rows.iter().map(|r| r.tokens_total).sum();
    let wall: u64 = rows.iter().map(|r| r.wall_time_ms).sum();
    (ok / n, tokens as f64 / n, wall as f64 / n)
}

impl TestReport {
    pub fn assemble(mode: Mode, seeds: &[u64], results: Vec<TypeResult>, lambda: f64) -> Self {
        let mut rows = Vec::new();
        let mut baseline = Vec::new();
        let mut ledger = TokenLedger::default();
        let mut baseline_ledger = TokenLedger::default();
        for r in results {
            rows.extend(r.rows);
            baseline.extend(r.baseline);
            ledger.extend(&r.ledger);
            baseline_ledger.extend(&r.baseline_ledger);
        }
        let (success_rate, mean_tokens, mean_wall_time_ms) = means(&rows);
        let (baseline_success_rate, baseline_mean_tokens, baseline_mean_wall_time_ms) = means(&baseline);
        let reduction = reduction_report(&baseline_ledger, &ledger).ok();
        TestReport {
            mode,
            seeds: seeds.to_vec(),
            rows,
            baseline,
            success_rate,
            mean_tokens,
            mean_wall_time_ms,
            baseline_success_rate,
            baseline_mean_tokens,
            baseline_mean_wall_time_ms,
            reduction,
            lambda,
            objective: (1.0 - success_rate) + lambda * mean_tokens,
        }
    }

    /// Mode tokens as a fraction of baseline tokens, `None` without a baseline.
    pub fn token_ratio(&self) -> Option<f64> {
        self.reduction.as_ref().map(|r| r.rpa_total as f64 / r.react_total as f64)
    }

    /// Thresholds the report does not meet.
    pub fn violations(&self, min_success_rate: Option<f64>, max_token_ratio: Option<f64>) -> Vec<String> {
        let mut v = Vec::new();
        if let Some(min) = min_success_rate {
            if self.success_rate < min {
                v.push(format!("success rate {:.3} is below {min}", self.success_rate));
            }
        }
        if let Some(max) = max_token_ratio {
            match self.token_ratio() {
                Some(r) if r > max => v.push(format!("token ratio {r:.4} is above {max}")),
                None => v.push("token ratio is undefined (baseline used no tokens)".into()),
                _ => {}
            }
        }
        v
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<16} {:>4} {:<15} {:>6} {:>8} {:>10} {:>9}", "task type", "seed", "path", "reward", "tokens", "wall ms", "baseline");
        for (i, r) in self.rows.iter().enumerate() {
            let base = self.baseline.get(i).map_or(String::from("-"), |b| b.tokens_total.to_string());
            let path = match r.mode {
                RowPath::Rpa => "rpa",
                RowPath::ReactFallback => "react_fallback",
                RowPath::React => "react",
            };
            let _ = writeln!(
                s,
                "{:<16} {:>4} {:<15} {:>6} {:>8} {:>10} {:>9}",
                r.task_type_id, r.seed, path, r.reward, r.tokens_total, r.wall_time_ms, base
            );
        }
        let _ = writeln!(s, "mode: {}", self.mode.as_str());
        let _ = writeln!(s, "success rate: {:.1}% (baseline {:.1}%)", 100.0 * self.success_rate, 100.0 * self.baseline_success_rate);
        let _ = writeln!(s, "mean tokens: {:.1} (baseline {:.1})", self.mean_tokens, self.baseline_mean_tokens);
        let _ = writeln!(s, "mean wall time: {:.0} ms (baseline {:.0} ms)", self.mean_wall_time_ms, self.baseline_mean_wall_time_ms);
        match &self.reduction {
            Some(r) => {
                let _ = writeln!(s, "token reduction: {:.2}% ({} vs {})", r.percent_reduction, r.rpa_total, r.react_total);
            }
            None => {
                let _ = writeln!(s, "token reduction: n/a");
            }
        }
        let _ = writeln!(s, "objective (lambda {}): {:.4}", self.lambda, self.objective);
        s
    }
}

/// Tests every build in order and aggregates the report.
pub fn evaluate(
    tasks: &TaskSet,
    builds: &[BuildState],
    seeds: &[u64],
    mode: Mode,
    cfg: &PipelineConfig,
    sessions: &dyn Sessions,
) -> Result<TestReport, PipelineError> {
    let mut results = Vec::new();
    for b in builds {
        results.push(test_task_type(tasks, b, seeds, mode, cfg, sessions)?);
    }
    Ok(TestReport::assemble(mode, seeds, results, cfg.lambda))
}
