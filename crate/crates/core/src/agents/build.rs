use serde::{Deserialize, Serialize};

use super::parse::{first_code, fenced_blocks, require, section, sections};
use super::{prompts, reask_text, AgentError};
use crate::dsl::ast::{Expr, ParamDoc, Program, ProgramDoc};
use crate::dsl::{parse, parse_expr, print_program, static_check};
use crate::llm::{AgentTag, ChatRequest, Gateway, Message};

pub const DEFAULT_TOOL_CAP: u32 = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RpaParam {
    pub name: String,
    pub ty: Option<String>,
    pub doc: String,
}

/// A generated, checked RPA function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RpaFunction {
    pub name: String,
    pub description: String,
    pub params: Vec<RpaParam>,
    pub example_usage: String,
    /// Canonical source including the documentation header.
    pub source: String,
    pub thought: String,
    pub conclusion: String,
}

impl RpaFunction {
    pub fn program(&self) -> Program {
        parse(&self.source).expect("stored RPA source parses")
    }

    pub fn params_text(&self) -> String {
        self.params.iter().map(param_line).collect::<Vec<_>>().join("\n")
    }
}

fn param_line(p: &RpaParam) -> String {
    match &p.ty {
        Some(ty) => format!("- {} ({ty}): {}", p.name, p.doc),
        None => format!("- {}: {}", p.name, p.doc),
    }
}

/// A trajectory the builder may inspect, under the name it is shown as.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceRef {
    pub alias: String,
    pub traj_id: String,
    pub steps: usize,
}

/// Resolves `fetch_info` calls.
pub trait InfoSource {
    /// `step` is 1-based; `None` asks for the whole simplified run.
    fn fetch(&self, traj_id: &str, step: Option<usize>) -> Result<String, String>;
}

pub struct BuildInput<'a> {
    pub task_template: &'a str,
    pub instruction: &'a str,
    pub variables: &'a [(String, String)],
    pub previous: Option<&'a RpaFunction>,
    /// Rendered simplified trajectory of the latest run.
    pub trajectory: &'a str,
    pub sources: &'a [SourceRef],
    pub tool_cap: u32,
}

fn user_message(input: &BuildInput<'_>) -> String {
    let mut s = format!("[Task Template]\n{}\n\n[Task Instance]\n{}\n\n[Task Variables]\n", input.task_template, input.instruction);
    for (k, v) in input.variables {
        s.push_str(&format!("- {k} = {}\n", serde_json::to_string(v).expect("string serializes")));
    }
    if let Some(prev) = input.previous {
        s.push_str(&format!("\n[Previous Function]\n```python\n{}```\n", prev.source));
    }
    s.push_str(&format!("\n[Latest Run]\n{}\n", input.trajectory.trim_end()));
    s.push_str("\n[Available Trajectories]\n");
    for src in input.sources {
        s.push_str(&format!("- {}: {} steps\n", src.alias, src.steps));
    }
    s
}

enum Turn {
    Tool { source: String, step: Option<usize> },
    Final,
}

fn classify(reply: &str) -> Result<Turn, AgentError> {
    if section(&sections(reply), "Skill Code").is_some() {
        return Ok(Turn::Final);
    }
    let candidate = fenced_blocks(reply)
        .into_iter()
        .find(|(lang, _)| lang == "json")
        .map(|(_, b)| b)
        .unwrap_or_else(|| reply.trim().to_string());
    let Ok(v) = serde_json::from_str::<serde_json::Value>(candidate.trim()) else {
        return Ok(Turn::Final);
    };
    let f = |d: &str| AgentError::format(AgentTag::Builder, d);
    if v.get("action").and_then(|a| a.as_str()) != Some("fetch_info") {
        return Err(f("the only tool is fetch_info"));
    }
    let args = v.get("arguments").ok_or_else(|| f("fetch_info needs \"arguments\""))?;
    let source = args.get("source").and_then(|s| s.as_str()).ok_or_else(|| f("fetch_info needs a string \"source\""))?;
    let step = match args.get("step") {
        None | Some(serde_json::Value::Null) => None,
        Some(s) => Some(s.as_u64().ok_or_else(|| f("\"step\" must be a positive integer"))? as usize),
    };
    Ok(Turn::Tool { source: source.to_string(), step })
}

/// Generates (or refines) an RPA function. The model may call `fetch_info`
/// up to `tool_cap` times before answering.
pub fn build(gw: &Gateway, input: &BuildInput<'_>, info: &dyn InfoSource) -> Result<RpaFunction, AgentError> {
    let system = prompts::render(prompts::BUILDER, &[("env_ops", prompts::ENV_OPS), ("code_ops", prompts::CODE_OPS)]);
    let mut messages = vec![Message::system(system), Message::user(user_message(input))];
    let mut tool_calls = 0u32;
    let mut reasked = false;
    loop {
        let reply = gw.complete(&ChatRequest::new(AgentTag::Builder, messages.clone()))?.content;
        let outcome = classify(&reply).and_then(|turn| match turn {
            Turn::Tool { source, step } => Ok(Err((source, step))),
            Turn::Final => parse_final(&reply).map(Ok),
        });
        match outcome {
            Ok(Ok(f)) => return Ok(f),
            Ok(Err((source, step))) => {
                tool_calls += 1;
                if tool_calls > input.tool_cap {
                    return Err(AgentError::ToolLoopExceeded(input.tool_cap));
                }
                let result = match input.sources.iter().find(|s| s.alias == source || s.traj_id == source) {
                    Some(src) => info.fetch(&src.traj_id, step).unwrap_or_else(|e| format!("error: {e}")),
                    None => format!("error: unknown source {source:?}"),
                };
                let label = match step {
                    Some(n) => format!("[fetch_info source={source} step={n}]"),
                    None => format!("[fetch_info source={source}]"),
                };
                messages.push(Message::assistant(reply));
                messages.push(Message::tool(format!("{label}\n{result}")));
            }
            Err(e) if !reasked => {
                reasked = true;
                log::debug!("builder re-ask: {e}");
                messages.push(Message::assistant(reply));
                messages.push(Message::user(reask_text(&e)));
            }
            Err(e) => return Err(e),
        }
    }
}

fn parse_param_line(line: &str) -> Option<RpaParam> {
    let body = line.trim().strip_prefix("- ")?;
    let (head, doc) = body.split_once(':')?;
    let head = head.trim();
    let (name, ty) = match head.split_once('(') {
        Some((n, rest)) => (n.trim(), Some(rest.trim_end_matches(')').trim().to_string())),
        None => (head, None),
    };
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return None;
    }
    Some(RpaParam { name: name.to_string(), ty, doc: doc.trim().to_string() })
}

pub(crate) fn parse_final(reply: &str) -> Result<RpaFunction, AgentError> {
    let f = |d: String| AgentError::format(AgentTag::Builder, d);
    let secs = sections(reply);
    let thought = require(&secs, "Thought").map_err(f)?.to_string();
    let params_body = require(&secs, "Parameters").map_err(f)?;
    let description = require(&secs, "Skill Description").map_err(f)?.to_string();
    let code = first_code(require(&secs, "Skill Code").map_err(f)?).map_err(f)?;
    let example = first_code(require(&secs, "Example Usage").map_err(f)?).map_err(f)?;
    let conclusion = section(&secs, "Conclusion").unwrap_or("").to_string();

    let mut program = parse(&code).map_err(|e| AgentError::Program(e.to_string()))?;
    let Some(name) = program.name.clone() else {
        return Err(AgentError::Program("the skill code must define one function".into()));
    };
    let diags = static_check(&program);
    if !diags.is_empty() {
        let list: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
        return Err(AgentError::Program(list.join("; ")));
    }
    let mut params = Vec::new();
    for line in params_body.lines().filter(|l| !l.trim().is_empty()) {
        params.push(parse_param_line(line).ok_or_else(|| f(format!("cannot read parameter line {line:?}")))?);
    }
    let declared: Vec<&str> = program.param_names();
    let listed: Vec<&str> = params.iter().map(|p| p.name.as_str()).collect();
    if declared != listed {
        return Err(f(format!("### Parameters lists {listed:?} but the function declares {declared:?}")));
    }
    let example = example.trim().to_string();
    match parse_expr(&example) {
        Ok(Expr::Call { func, .. }) if matches!(func.as_ref(), Expr::Name(n) if *n == name) => {}
        _ => return Err(f(format!("example usage must be a single call to {name}"))),
    }
    program.doc = ProgramDoc {
        description: description.clone(),
        params: params.iter().map(|p| ParamDoc { name: p.name.clone(), ty: p.ty.clone(), doc: p.doc.clone() }).collect(),
        example_usage: example.clone(),
    };
    let source = print_program(&program);
    Ok(RpaFunction { name, description, params, example_usage: example, source, thought, conclusion })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn final_reply(code: &str) -> String {
        format!(
            "### Thought:\nplan\n### Parameters:\n- name (str): who\n### Skill Description:\nGreets.\n### Skill Code:\n```python\n{code}```\n### Example Usage:\n```python\ngreet(name=\"x\")\n```\n### Conclusion:\nfirst version\n"
        )
    }

    #[test]
    fn final_answer_becomes_documented_source() {
        let f = parse_final(&final_reply("def greet(name: str = None):\n    env_op.stop(\"complete\")\n")).unwrap();
        assert_eq!(f.name, "greet");
        assert!(f.source.starts_with("### Func Description:\n# Greets.\n"));
        assert_eq!(f.program().doc.params[0].name, "name");
        assert_eq!(parse(&f.source).unwrap(), f.program());
    }

    #[test]
    fn rejects_programs_with_findings() {
        let r = parse_final(&final_reply("def greet(name: str = None):\n    assert name\n"));
        assert!(matches!(r, Err(AgentError::Program(m)) if m.contains("assert without message")));
        let r = parse_final(&final_reply("def greet(name: str = None):\n    x = [i for i in y]\n"));
        assert!(matches!(r, Err(AgentError::Program(_))));
        let r = parse_final(&final_reply("def greet(other: str = None):\n    env_op.stop(\"complete\")\n"));
        assert!(matches!(r, Err(AgentError::Format { .. })));
    }

    #[test]
    fn tool_calls_are_recognised() {
        let t = "```json\n{\"action\": \"fetch_info\", \"arguments\": {\"source\": \"fix_react_traj\", \"step\": 3}}\n```";
        assert!(matches!(classify(t), Ok(Turn::Tool { source, step: Some(3) }) if source == "fix_react_traj"));
        assert!(matches!(classify("{\"action\": \"fetch_info\", \"arguments\": {\"source\": \"a\"}}"), Ok(Turn::Tool { step: None, .. })));
        assert!(classify("{\"action\": \"delete\"}").is_err());
        assert!(matches!(classify("free text"), Ok(Turn::Final)));
    }

    #[test]
    fn param_lines() {
        assert_eq!(parse_param_line("- a (Optional[str]): x: y").unwrap().doc, "x: y");
        assert_eq!(parse_param_line("- a: b").unwrap().ty, None);
        assert!(parse_param_line("a: b").is_none());
    }
}
