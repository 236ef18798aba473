//! Single ReAct episodes and single program runs.

use std::collections::BTreeMap;

use crate::agents::{
    check_soft_code, conclude, fill_parameters, react_step, summarize_action, translate, AgentError, Conclusion,
    ExecutorCall, GatewayGrounder, GatewayMllm, HistoryItem, ReactInput, RpaFunction, TranslateInput,
};
use crate::bank::{FullTrajectory, TrajKind, TrajStep};
use crate::dsl::{run, ExecTrace, Outcome, Services};
use crate::env::{ActionKind, GuiEnv, HardAction, Observation};
use crate::llm::Gateway;

use super::{PipelineConfig, PipelineError};

/// Splits agent errors into fatal backend failures and ordinary task failures.
pub(crate) fn soft<T>(r: Result<T, AgentError>) -> Result<Result<T, AgentError>, PipelineError> {
    match r {
        Err(AgentError::Llm(e)) => Err(PipelineError::Llm(e)),
        other => Ok(other),
    }
}

/// An action counts as effective when it changed the screen or is one of the
/// actions that legitimately leave it unchanged.
pub fn is_effective(action: &HardAction, before: &Observation, after: &Observation) -> bool {
    before.screen_id != after.screen_id || matches!(action.kind, ActionKind::Answer | ActionKind::Wait | ActionKind::Stop)
}

pub(crate) struct ReactOptions<'a> {
    pub reflection: Option<&'a str>,
    pub guidance: Option<&'a str>,
    /// Steps already taken in this episode by someone else (a program).
    pub prior: Vec<HistoryItem>,
    pub translate: bool,
    pub conclude: bool,
}

pub(crate) struct Episode {
    pub trajectory: FullTrajectory,
    pub reward: u8,
    pub error: Option<String>,
}

/// Runs ReAct on `env` until the episode ends.
pub(crate) fn run_react(
    gw: &Gateway,
    cfg: &PipelineConfig,
    env: &mut GuiEnv,
    opts: ReactOptions<'_>,
) -> Result<Episode, PipelineError> {
    let instruction = env.instance().instruction.clone();
    let mut history = opts.prior.clone();
    let mut steps: Vec<TrajStep> = Vec::new();
    let mut error = None;
    // failed env calls do not advance the step counter, so bound turns too
    let max_turns = env.step_cap() as usize + 5;
    let mut turns = 0;
    while !env.is_terminal() {
        turns += 1;
        if turns > max_turns {
            error = Some("too many rejected actions".to_string());
            break;
        }
        let obs = env.observe().clone();
        let input = ReactInput {
            instruction: &instruction,
            reflection: opts.reflection,
            guidance: opts.guidance,
            history: &history,
            obs: &obs,
            unified: cfg.unified_translator && opts.translate,
        };
        let out = match soft(react_step(gw, &input))? {
            Ok(o) => o,
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        };
        let env_before = opts.translate.then(|| env.clone());
        let after = match env.step(&out.action) {
            Ok(a) => a,
            Err(e) => {
                history.push(HistoryItem { action: out.action.to_string(), summary: format!("The action was rejected: {e}.") });
                continue;
            }
        };
        let summary = match soft(summarize_action(gw, &instruction, &out.next_action_justification, &out.action.to_string(), &obs, &after))? {
            Ok(s) => s.summary,
            Err(e) => {
                log::warn!("summarizer failed: {e}");
                format!("Executed {}.", out.action)
            }
        };
        history.push(HistoryItem { action: out.action.to_string(), summary: summary.clone() });
        if !is_effective(&out.action, &obs, &after) {
            continue;
        }
        let code = match &env_before {
            Some(before_env) => {
                let unified = match &out.soft_code {
                    Some(code) => soft(check_soft_code(gw, code, &out.action, before_env, cfg.matcher))?.ok().map(|_| code.clone()),
                    None => None,
                };
                match unified {
                    Some(code) => code,
                    None => {
                        let input = TranslateInput {
                            instruction: &instruction,
                            react: &out,
                            before: &obs,
                            after: &after,
                            env_before: before_env,
                            matcher: cfg.matcher,
                        };
                        match soft(translate(gw, &input))? {
                            Ok(sa) => sa.code,
                            Err(e) => {
                                log::warn!("translation of {} failed: {e}", out.action);
                                format!("{}\n", out.action)
                            }
                        }
                    }
                }
            }
            None => format!("{}\n", out.action),
        };
        steps.push(TrajStep { obs, code, hard: out.action.clone(), rho: summary, obs_after: after });
    }
    if !env.is_terminal() {
        env.finish();
    }
    let reward = env.reward()?;
    let conclusion = if opts.conclude {
        match soft(conclude(gw, &instruction, &history, reward))? {
            Ok(c) => c,
            Err(e) => fallback_conclusion(reward, &e.to_string()),
        }
    } else {
        fallback_conclusion(reward, error.as_deref().unwrap_or("not concluded"))
    };
    let trajectory = FullTrajectory {
        task: env.instance().clone(),
        kind: TrajKind::React,
        steps,
        o_final: env.observe().clone(),
        reward,
        conclusion,
        splice: None,
        analyzer: None,
        failure: None,
    };
    Ok(Episode { trajectory, reward, error })
}

fn fallback_conclusion(reward: u8, note: &str) -> Conclusion {
    if reward == 1 {
        Conclusion { conclusion: "The task was completed.".into(), reflection: None }
    } else {
        Conclusion { conclusion: "The task was not completed.".into(), reflection: Some(format!("No reflection available ({note}).")) }
    }
}

pub(crate) struct RpaRun {
    pub call: Option<ExecutorCall>,
    pub trace: ExecTrace,
    pub reward: u8,
    pub passed: bool,
    pub env: GuiEnv,
}

impl RpaRun {
    /// Why the run failed, for reports and the analyzer.
    pub fn failure(&self) -> Option<String> {
        if self.passed {
            return None;
        }
        Some(match &self.trace.breakpoint {
            Some(bp) => bp.message.clone(),
            None => "The program finished but the task was not achieved.".into(),
        })
    }
}

/// Fills the parameters of `rpa` for the env's task and runs it.
pub(crate) fn run_rpa(gw: &Gateway, cfg: &PipelineConfig, rpa: &RpaFunction, mut env: GuiEnv) -> Result<RpaRun, PipelineError> {
    let instruction = env.instance().instruction.clone();
    let call = match soft(fill_parameters(gw, rpa, &instruction))? {
        Ok(c) => c,
        Err(e) => {
            let trace = ExecTrace::not_started(format!("Could not fill in the parameters: {e}"), env.observe());
            return Ok(RpaRun { call: None, trace, reward: 0, passed: false, env });
        }
    };
    let program = rpa.program();
    let args: BTreeMap<_, _> = call.values();
    let mut grounder = GatewayGrounder::new(gw);
    let mut mllm = GatewayMllm::new(gw);
    let result = {
        let mut svc = Services::new(&mut grounder, &mut mllm);
        svc.matcher = cfg.matcher;
        run(&program, &args, &mut env, &mut svc)
    };
    if let Some(e) = grounder.take_failure().or_else(|| mllm.take_failure()) {
        return Err(PipelineError::Llm(e));
    }
    let trace = match result {
        Ok(t) => t,
        Err(e) => ExecTrace::not_started(format!("The call was rejected: {e}"), env.observe()),
    };
    if trace.outcome == Outcome::Completed && !env.is_terminal() {
        env.finish();
    }
    let reward = if env.is_terminal() { env.reward()? } else { 0 };
    let passed = trace.outcome == Outcome::Completed && reward == 1;
    Ok(RpaRun { call: Some(call), trace, reward, passed, env })
}
