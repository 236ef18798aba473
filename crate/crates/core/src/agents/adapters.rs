//! Gateway-backed grounder and multimodal model for running programs.
//!
//! Backend errors cannot travel through the interpreter's service traits, so
//! the first one is kept and can be taken after the run.

use super::prompts;
use crate::dsl::Mllm;
use crate::env::Observation;
use crate::llm::{AgentTag, ChatRequest, Gateway, LlmError, Message};
use crate::matcher::{Grounder, MatchError};

pub struct GatewayGrounder<'g> {
    gw: &'g Gateway,
    failure: Option<LlmError>,
}

impl<'g> GatewayGrounder<'g> {
    pub fn new(gw: &'g Gateway) -> Self {
        GatewayGrounder { gw, failure: None }
    }

    pub fn take_failure(&mut self) -> Option<LlmError> {
        self.failure.take()
    }
}

impl Grounder for GatewayGrounder<'_> {
    fn ground(&mut self, prompt: &str) -> Result<String, MatchError> {
        let req = ChatRequest::new(AgentTag::Grounder, vec![Message::system(prompts::GROUNDER), Message::user(prompt)]);
        match self.gw.complete(&req) {
            Ok(r) => Ok(r.content),
            Err(e) => {
                let msg = e.to_string();
                self.failure.get_or_insert(e);
                Err(MatchError::GroundingUnavailable(msg))
            }
        }
    }
}

pub struct GatewayMllm<'g> {
    gw: &'g Gateway,
    failure: Option<LlmError>,
}

impl<'g> GatewayMllm<'g> {
    pub fn new(gw: &'g Gateway) -> Self {
        GatewayMllm { gw, failure: None }
    }

    pub fn take_failure(&mut self) -> Option<LlmError> {
        self.failure.take()
    }
}

impl Mllm for GatewayMllm<'_> {
    fn ask(&mut self, question: &str, output_format: &str, obs: &Observation) -> Result<String, String> {
        let user = format!("[Question]\n{question}\n\n[Output Format]\n{output_format}\n\n[Current Screen]\n{}", obs.digest());
        let req = ChatRequest::new(AgentTag::Mllm, vec![Message::system(prompts::MLLM), Message::user(user)]);
        match self.gw.complete(&req) {
            Ok(r) => Ok(r.content.trim().to_string()),
            Err(e) => {
                let msg = e.to_string();
                self.failure.get_or_insert(e);
                Err(msg)
            }
        }
    }
}
