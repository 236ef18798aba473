//! Prompt assembly and structured-output parsing for every agent role.
//!
//! Each role is a function that renders its prompt, calls the [`Gateway`] and
//! parses the reply. A reply that cannot be used gets one re-ask with the
//! parse error attached; a second bad reply is returned as an error.

mod adapters;
mod analyze;
mod build;
mod execute;
pub mod parse;
mod react;
mod review;
mod translate;

use thiserror::Error;

use crate::llm::{AgentTag, ChatRequest, Gateway, LlmError, Message};

pub use adapters::{GatewayGrounder, GatewayMllm};
pub use analyze::{analyze_breakpoint, AnalyzerInput, AnalyzerOutput};
#[cfg(test)]
pub(crate) use build::parse_final as parse_builder_reply;
pub use build::{build, BuildInput, InfoSource, RpaFunction, SourceRef, DEFAULT_TOOL_CAP};
pub use execute::{fill_parameters, ExecutorCall};
pub use react::{action_from_code, react_step, HistoryItem, ReactInput, ReactOutput};
pub use review::{conclude, summarize_action, Conclusion, Summary};
pub use translate::{check_soft_code, translate, SoftAction, TranslateInput};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("{agent} reply is malformed: {detail}")]
    Format { agent: &'static str, detail: String },
    #[error("unknown action {0}")]
    UnknownAction(String),
    #[error("soft-coded action does not reproduce {expected}: {detail}")]
    TranslationInconsistent { expected: String, detail: String },
    #[error("builder asked for more than {0} fetch_info calls")]
    ToolLoopExceeded(u32),
    #[error("generated program rejected: {0}")]
    Program(String),
    #[error("parameter {0} is not declared by the function")]
    UnknownParam(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

impl AgentError {
    pub(crate) fn format(agent: AgentTag, detail: impl Into<String>) -> Self {
        AgentError::Format { agent: agent.as_str(), detail: detail.into() }
    }

    /// Backend failures are never re-asked and abort the surrounding run.
    pub fn is_backend(&self) -> bool {
        matches!(self, AgentError::Llm(_))
    }
}

pub(crate) mod prompts {
    pub const ENV_OPS: &str = include_str!("../../assets/prompts/env_ops.txt");
    pub const CODE_OPS: &str = include_str!("../../assets/prompts/code_ops.txt");
    pub const REACT: &str = include_str!("../../assets/prompts/react.txt");
    pub const REACT_UNIFIED: &str = include_str!("../../assets/prompts/react_unified.txt");
    pub const SUMMARIZER: &str = include_str!("../../assets/prompts/summarizer.txt");
    pub const CONCLUDER: &str = include_str!("../../assets/prompts/concluder.txt");
    pub const TRANSLATOR: &str = include_str!("../../assets/prompts/translator.txt");
    pub const BUILDER: &str = include_str!("../../assets/prompts/builder.txt");
    pub const ANALYZER: &str = include_str!("../../assets/prompts/analyzer.txt");
    pub const EXECUTOR: &str = include_str!("../../assets/prompts/executor.txt");
    pub const GROUNDER: &str = include_str!("../../assets/prompts/grounder.txt");
    pub const MLLM: &str = include_str!("../../assets/prompts/mllm.txt");

    /// Replaces `{{slot}}` markers.
    pub fn render(template: &str, slots: &[(&str, &str)]) -> String {
        let mut out = template.to_string();
        for (k, v) in slots {
            out = out.replace(&format!("{{{{{k}}}}}"), v.trim_end());
        }
        out
    }
}

const REASK: &str = "Your previous reply could not be used";

/// Sends `messages`, parses the reply and re-asks once on a parse failure.
pub(crate) fn converse<T>(
    gw: &Gateway,
    agent: AgentTag,
    mut messages: Vec<Message>,
    mut parse: impl FnMut(&str) -> Result<T, AgentError>,
) -> Result<T, AgentError> {
    let first = gw.complete(&ChatRequest::new(agent, messages.clone()))?;
    match parse(&first.content) {
        Ok(v) => Ok(v),
        Err(e) if e.is_backend() => Err(e),
        Err(e) => {
            log::debug!("{} re-ask: {e}", agent.as_str());
            messages.push(Message::assistant(first.content));
            messages.push(Message::user(reask_text(&e)));
            let second = gw.complete(&ChatRequest::new(agent, messages))?;
            parse(&second.content)
        }
    }
}

pub(crate) fn reask_text(e: &AgentError) -> String {
    format!("{REASK}: {e}.\nAnswer again and follow the required format exactly.")
}

/// Prefix of every re-ask message, for responders that need to spot one.
pub fn is_reask(text: &str) -> bool {
    text.starts_with(REASK)
}
