use serde::{Deserialize, Serialize};

use super::parse::{require, sections};
use super::react::{history_text, HistoryItem};
use super::{converse, prompts, AgentError};
use crate::env::Observation;
use crate::llm::{AgentTag, Gateway, Message};

pub struct AnalyzerInput<'a> {
    pub instruction: &'a str,
    pub program_source: &'a str,
    /// Executed program steps: source line and result.
    pub steps: &'a [HistoryItem],
    pub message: &'a str,
    pub obs: &'a Observation,
    pub episode_over: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyzerOutput {
    pub observations: String,
    pub completed_tasks: String,
    pub plan_justification: String,
    pub plan_list: String,
    /// `Y`: continue from the failure point; `N`: restart the task.
    pub resume: bool,
}

impl AnalyzerOutput {
    pub fn verdict(&self) -> &'static str {
        if self.resume {
            "Y"
        } else {
            "N"
        }
    }

    /// Notes handed to the ReAct agent that takes over.
    pub fn guidance(&self) -> String {
        format!("Already done: {}\nRemaining plan:\n{}", self.completed_tasks, self.plan_list)
    }
}

/// Decides whether a failed program run can be continued in place.
pub fn analyze_breakpoint(gw: &Gateway, input: &AnalyzerInput<'_>) -> Result<AnalyzerOutput, AgentError> {
    let status = if input.episode_over { "ended" } else { "running" };
    let user = format!(
        "[Task]\n{}\n\n[Function]\n```python\n{}```\n\n[Executed Steps]\n{}\n[Failure]\n{}\n\n[Episode Status]\n{status}\n\n[Current Screen]\n{}",
        input.instruction,
        input.program_source,
        history_text(input.steps),
        input.message,
        input.obs.digest()
    );
    let messages = vec![Message::system(prompts::ANALYZER), Message::user(user)];
    converse(gw, AgentTag::Analyzer, messages, |reply| {
        let f = |d: String| AgentError::format(AgentTag::Analyzer, d);
        let secs = sections(reply);
        let get = |n: &str| require(&secs, n).map(str::to_string).map_err(f);
        let verdict = get("Whether To Continue")?;
        let resume = match verdict.trim().chars().next().map(|c| c.to_ascii_uppercase()) {
            Some('Y') => true,
            Some('N') => false,
            _ => return Err(f(format!("\"### Whether To Continue:\" must be Y or N, got {verdict:?}"))),
        };
        Ok(AnalyzerOutput {
            observations: get("Observations")?,
            completed_tasks: get("Completed Tasks")?,
            plan_justification: get("Plan Justification")?,
            plan_list: get("Plan List")?,
            resume,
        })
    })
}
