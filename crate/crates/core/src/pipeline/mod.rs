//! Build and test orchestration.
//!
//! Building a task type explores the first building task with ReAct, asks
//! the builder for a program, then verifies it task by task. The first
//! failure triggers a hybrid repair and a refinement, after which the sweep
//! starts again from the first task. Testing runs the finished program (or
//! ReAct) on fresh instances.

mod episode;
mod replay;
mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    analyze_breakpoint, build, AnalyzerInput, AnalyzerOutput, BuildInput, ExecutorCall, HistoryItem, RpaFunction, SourceRef,
    DEFAULT_TOOL_CAP,
};
use crate::bank::{concat_hybrid, Bank, BankError, FullTrajectory};
use crate::dsl::Outcome;
use crate::env::{placeholders, EnvError, GuiEnv, TaskInstance, TaskSet};
use crate::llm::{Gateway, LlmError, Phase};
use crate::matcher::MatcherConfig;

pub use episode::is_effective;
pub use replay::{replay, ReplayDiff};
pub use report::{evaluate, run_test, test_task_type, Mode, RowPath, Sessions, TestReport, TestRow, TypeResult};

use episode::{run_react, run_rpa, soft, ReactOptions};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Building tasks per type (seeds 1..=n).
    pub n: usize,
    /// Reflection retries during exploration.
    pub n_ref: u32,
    /// Refinement cap.
    pub m: u32,
    pub tool_cap: u32,
    pub unified_translator: bool,
    #[serde(skip)]
    pub matcher: MatcherConfig,
    /// Modeled duration of one environment step.
    pub step_ms: u64,
    /// Weight of tokens in the reported objective.
    pub lambda: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n: 3,
            n_ref: 2,
            m: 3,
            tool_cap: DEFAULT_TOOL_CAP,
            unified_translator: false,
            matcher: MatcherConfig::default(),
            step_ms: 2_000,
            lambda: 1e-4,
        }
    }
}

impl PipelineConfig {
    pub fn build_seeds(&self) -> Vec<u64> {
        (1..=self.n as u64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildStatus {
    Exploring,
    Verifying,
    Verified,
    NonAutomatable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyRecord {
    pub seed: u64,
    /// Index into [`BuildState::versions`].
    pub version: usize,
    pub passed: bool,
    pub outcome: Outcome,
    pub reward: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call: Option<ExecutorCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub trajectory: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RpaVersion {
    pub rpa: RpaFunction,
    /// Seen tasks this version passed.
    pub passes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairRecord {
    pub seed: u64,
    pub verdict: String,
    pub hybrid: String,
    pub splice: usize,
    pub tail_reward: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildState {
    pub task_type_id: String,
    pub status: BuildStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub seen: Vec<TaskInstance>,
    /// The current program; verified when `status` is verified.
    pub rpa: Option<RpaFunction>,
    pub versions: Vec<RpaVersion>,
    pub refinements_used: u32,
    pub builder_calls: u32,
    /// Exploration episodes per building seed.
    pub exploration_episodes: BTreeMap<u64, u32>,
    pub verification: Vec<VerifyRecord>,
    pub repairs: Vec<RepairRecord>,
    pub trajectories: Vec<String>,
    pub usage: BTreeMap<String, crate::llm::Usage>,
}

impl BuildState {
    fn new(task_type_id: &str) -> Self {
        BuildState {
            task_type_id: task_type_id.to_string(),
            status: BuildStatus::Exploring,
            reason: None,
            seen: Vec::new(),
            rpa: None,
            versions: Vec::new(),
            refinements_used: 0,
            builder_calls: 0,
            exploration_episodes: BTreeMap::new(),
            verification: Vec::new(),
            repairs: Vec::new(),
            trajectories: Vec::new(),
            usage: BTreeMap::new(),
        }
    }

    /// The verified program, or else the version that passed the most seen
    /// tasks (earliest on ties).
    pub fn best_rpa(&self) -> Option<&RpaFunction> {
        if self.status == BuildStatus::Verified {
            return self.rpa.as_ref();
        }
        let mut best: Option<&RpaVersion> = None;
        for v in &self.versions {
            if best.is_none_or(|b| v.passes > b.passes) {
                best = Some(v);
            }
        }
        best.map(|v| &v.rpa)
    }

    fn non_automatable(&mut self, reason: impl Into<String>) {
        self.status = BuildStatus::NonAutomatable;
        self.reason = Some(reason.into());
    }
}

struct Builder<'a> {
    tasks: &'a TaskSet,
    gw: &'a Gateway,
    bank: &'a mut Bank,
    cfg: &'a PipelineConfig,
    state: BuildState,
}

/// Explores, builds and verifies one task type.
pub fn build_task_type(
    tasks: &TaskSet,
    task_type_id: &str,
    gw: &Gateway,
    bank: &mut Bank,
    cfg: &PipelineConfig,
) -> Result<BuildState, PipelineError> {
    tasks.get(task_type_id)?;
    let mut b = Builder { tasks, gw, bank, cfg, state: BuildState::new(task_type_id) };
    b.run()?;
    let mut state = b.state;
    state.usage = gw.ledger().by_phase().into_iter().map(|(p, u)| (p.as_str().to_string(), u)).collect();
    Ok(state)
}

impl Builder<'_> {
    fn env(&self, seed: u64) -> Result<GuiEnv, PipelineError> {
        Ok(GuiEnv::instantiate(self.tasks, &self.state.task_type_id, seed)?)
    }

    fn variables(&self, inst: &TaskInstance) -> Vec<(String, String)> {
        let tt = self.tasks.get(&inst.task_type_id).expect("task type exists");
        placeholders(&tt.template)
            .into_iter()
            .filter_map(|k| inst.bindings.get(&k).map(|v| (k.clone(), v.clone())))
            .collect()
    }

    fn run(&mut self) -> Result<(), PipelineError> {
        let seeds = self.cfg.build_seeds();
        let Some(&first_seed) = seeds.first() else {
            self.state.non_automatable("no building tasks configured");
            return Ok(());
        };
        self.gw.set_phase(Phase::Building);
        let g1 = self.env(first_seed)?.instance().clone();
        self.state.seen.push(g1.clone());

        // exploration with reflection retries
        let mut reflection: Option<String> = None;
        let mut success = None;
        let mut failed = None;
        for _ in 0..=self.cfg.n_ref {
            let mut env = self.env(first_seed)?;
            let ep = run_react(
                self.gw,
                self.cfg,
                &mut env,
                ReactOptions { reflection: reflection.as_deref(), guidance: None, prior: Vec::new(), translate: true, conclude: true },
            )?;
            *self.state.exploration_episodes.entry(first_seed).or_default() += 1;
            let next_reflection = ep.trajectory.conclusion.reflection.clone();
            let id = self.bank.store(ep.trajectory)?;
            self.state.trajectories.push(id.clone());
            if ep.reward == 1 {
                success = Some(id);
                break;
            }
            failed = Some(id);
            reflection = next_reflection;
        }
        let Some(success) = success else {
            self.state.non_automatable(format!(
                "exploration failed: no successful run of {} within {} attempt(s)",
                g1.instruction,
                self.cfg.n_ref + 1
            ));
            return Ok(());
        };

        let mut sources = vec![SourceRef {
            alias: "successful_react_traj".into(),
            traj_id: success.clone(),
            steps: self.bank.get(&success)?.steps.len(),
        }];
        if let Some(f) = &failed {
            sources.push(SourceRef { alias: "failed_react_traj".into(), traj_id: f.clone(), steps: self.bank.get(f)?.steps.len() });
        }
        let trajectory = self.bank.simplified(&success)?.render();
        let rpa = match self.call_builder(&g1, None, &trajectory, &sources)? {
            Ok(r) => r,
            Err(e) => {
                self.state.non_automatable(format!("builder failed: {e}"));
                return Ok(());
            }
        };
        self.state.versions.push(RpaVersion { rpa: rpa.clone(), passes: 0 });
        self.state.rpa = Some(rpa);
        self.state.status = BuildStatus::Verifying;
        self.verify_loop(&success, &seeds)
    }

    fn call_builder(
        &mut self,
        inst: &TaskInstance,
        previous: Option<&RpaFunction>,
        trajectory: &str,
        sources: &[SourceRef],
    ) -> Result<Result<RpaFunction, crate::agents::AgentError>, PipelineError> {
        self.gw.set_phase(Phase::Building);
        let tt = self.tasks.get(&inst.task_type_id)?;
        let variables = self.variables(inst);
        let input = BuildInput {
            task_template: &tt.template,
            instruction: &inst.instruction,
            variables: &variables,
            previous,
            trajectory,
            sources,
            tool_cap: self.cfg.tool_cap,
        };
        self.state.builder_calls += 1;
        soft(build(self.gw, &input, &*self.bank))
    }

    fn verify_loop(&mut self, success: &str, seeds: &[u64]) -> Result<(), PipelineError> {
        let mut start = 0;
        loop {
            self.gw.set_phase(Phase::Verification);
            let rpa = self.state.rpa.clone().expect("program present while verifying");
            let version = self.state.versions.len() - 1;
            let mut failure = None;
            for i in start..self.state.seen.len() {
                let inst = self.state.seen[i].clone();
                let run = run_rpa(self.gw, self.cfg, &rpa, self.env(inst.seed)?)?;
                let traj = FullTrajectory::from_exec(inst.clone(), &run.trace, run.reward);
                let id = self.bank.store(traj)?;
                self.state.trajectories.push(id.clone());
                self.state.verification.push(VerifyRecord {
                    seed: inst.seed,
                    version,
                    passed: run.passed,
                    outcome: run.trace.outcome,
                    reward: run.reward,
                    call: run.call.clone(),
                    failure: run.failure(),
                    trajectory: id.clone(),
                });
                if run.passed {
                    self.state.versions[version].passes += 1;
                } else {
                    failure = Some((inst, run, id));
                    break;
                }
            }
            let Some((inst, run, code_id)) = failure else {
                if self.state.seen.len() < seeds.len() {
                    let next = self.env(seeds[self.state.seen.len()])?.instance().clone();
                    self.state.seen.push(next);
                    start = self.state.seen.len() - 1;
                    continue;
                }
                self.state.status = BuildStatus::Verified;
                return Ok(());
            };
            if self.state.refinements_used >= self.cfg.m {
                self.state.non_automatable(format!(
                    "verification still failing on seed {} after {} refinement(s)",
                    inst.seed, self.state.refinements_used
                ));
                return Ok(());
            }
            let hybrid_id = self.repair(&inst, run, &rpa)?;
            let mut sources = vec![
                SourceRef {
                    alias: "pre_skill_exec_traj".into(),
                    traj_id: code_id.clone(),
                    steps: self.bank.get(&code_id)?.steps.len(),
                },
                SourceRef { alias: "fix_react_traj".into(), traj_id: hybrid_id.clone(), steps: self.bank.get(&hybrid_id)?.steps.len() },
            ];
            sources.push(SourceRef {
                alias: "successful_react_traj".into(),
                traj_id: success.to_string(),
                steps: self.bank.get(success)?.steps.len(),
            });
            let trajectory = self.bank.simplified(&hybrid_id)?.render();
            let refined = self.call_builder(&inst, Some(&rpa), &trajectory, &sources)?;
            self.state.refinements_used += 1;
            match refined {
                Ok(r) => {
                    self.state.versions.push(RpaVersion { rpa: r.clone(), passes: 0 });
                    self.state.rpa = Some(r);
                }
                Err(e) => {
                    log::warn!("{}: refinement failed: {e}", self.state.task_type_id);
                    self.state.versions.push(RpaVersion { rpa: rpa.clone(), passes: 0 });
                }
            }
            start = 0;
        }
    }

    /// Analyzer verdict, ReAct takeover and hybrid trajectory for a failed run.
    fn repair(&mut self, inst: &TaskInstance, run: episode::RpaRun, rpa: &RpaFunction) -> Result<String, PipelineError> {
        let message = run.failure().unwrap_or_default();
        let program_steps: Vec<HistoryItem> =
            run.trace.steps.iter().map(|s| HistoryItem { action: s.source.clone(), summary: s.rho.clone() }).collect();
        let episode_over = run.env.is_terminal();
        let input = AnalyzerInput {
            instruction: &inst.instruction,
            program_source: &rpa.source,
            steps: &program_steps,
            message: &message,
            obs: &run.trace.final_observation,
            episode_over,
        };
        let mut analysis = match soft(analyze_breakpoint(self.gw, &input))? {
            Ok(a) => a,
            Err(e) => {
                log::warn!("analyzer failed, restarting: {e}");
                AnalyzerOutput {
                    observations: String::new(),
                    completed_tasks: "unknown".into(),
                    plan_justification: String::new(),
                    plan_list: "Start the task again from the beginning.".into(),
                    resume: false,
                }
            }
        };
        if analysis.resume && episode_over {
            log::warn!("analyzer chose to continue an episode that has ended; restarting instead");
            analysis.resume = false;
        }
        let guidance = analysis.guidance();
        let (mut env, prior) = if analysis.resume { (run.env, program_steps) } else { (self.env(inst.seed)?, Vec::new()) };
        let tail = run_react(
            self.gw,
            self.cfg,
            &mut env,
            ReactOptions { reflection: None, guidance: Some(&guidance), prior, translate: true, conclude: true },
        )?;
        let tail_reward = tail.reward;
        let code_steps = FullTrajectory::from_exec(inst.clone(), &run.trace, run.reward).steps;
        let verdict = analysis.verdict().to_string();
        let hybrid = concat_hybrid(&code_steps, &run.trace.final_observation, analysis, &message, tail.trajectory)?;
        let splice = hybrid.splice.unwrap_or(0);
        let id = self.bank.store(hybrid)?;
        self.state.trajectories.push(id.clone());
        self.state.repairs.push(RepairRecord { seed: inst.seed, verdict, hybrid: id.clone(), splice, tail_reward });
        Ok(id)
    }
}
