use serde::{Deserialize, Serialize};

use super::parse::{require, section, sections};
use super::react::{history_text, HistoryItem};
use super::{converse, prompts, AgentError};
use crate::env::Observation;
use crate::llm::{AgentTag, Gateway, Message};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub screen_changes: String,
    /// The one-line result description stored with the step.
    pub summary: String,
}

impl Summary {
    pub fn nothing_happened(&self) -> bool {
        self.screen_changes.trim().trim_end_matches('.').eq_ignore_ascii_case("nothing happens")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conclusion {
    pub conclusion: String,
    /// Present exactly when the episode failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflection: Option<String>,
}

/// Describes the effect of one executed action.
pub fn summarize_action(
    gw: &Gateway,
    instruction: &str,
    intent: &str,
    action: &str,
    before: &Observation,
    after: &Observation,
) -> Result<Summary, AgentError> {
    let user = format!(
        "[Task]\n{instruction}\n\n[Intent]\n{intent}\n\n[Executed Call]\n{action}\n\n[Screen Before]\n{}\n[Screen After]\n{}",
        before.digest(),
        after.digest()
    );
    let messages = vec![Message::system(prompts::SUMMARIZER), Message::user(user)];
    converse(gw, AgentTag::Summarizer, messages, |reply| {
        let f = |d: String| AgentError::format(AgentTag::Summarizer, d);
        let secs = sections(reply);
        let changes = require(&secs, "Screen Changes").map_err(f)?;
        let summary = require(&secs, "Execution Summary").map_err(f)?;
        if summary.is_empty() {
            return Err(f("empty execution summary".into()));
        }
        Ok(Summary { screen_changes: changes.to_string(), summary: summary.to_string() })
    })
}

/// Writes the end-of-episode conclusion; a failed episode also gets a
/// reflection for the next attempt.
pub fn conclude(gw: &Gateway, instruction: &str, steps: &[HistoryItem], reward: u8) -> Result<Conclusion, AgentError> {
    let outcome = if reward == 1 { "success" } else { "failure" };
    let user = format!("[Task]\n{instruction}\n\n[Steps]\n{}\n[Outcome]\n{outcome}\n", history_text(steps));
    let messages = vec![Message::system(prompts::CONCLUDER), Message::user(user)];
    converse(gw, AgentTag::Concluder, messages, |reply| {
        let f = |d: String| AgentError::format(AgentTag::Concluder, d);
        let secs = sections(reply);
        let conclusion = require(&secs, "Episode Conclusion").map_err(f)?.to_string();
        let reflection = section(&secs, "Reflection").map(str::trim).filter(|r| !r.is_empty()).map(str::to_string);
        match (reward, reflection) {
            (1, _) => Ok(Conclusion { conclusion, reflection: None }),
            (_, None) => Err(f("a failed episode needs a non-empty \"### Reflection:\" section".into())),
            (_, r) => Ok(Conclusion { conclusion, reflection: r }),
        }
    })
}
