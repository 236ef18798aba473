use serde::{Deserialize, Serialize};

use super::parse::{code_lines, first_code, require, section, sections};
use super::{converse, prompts, AgentError};
use crate::dsl::{ast::Arg, ast::Expr, const_eval, parse_expr, Value};
use crate::env::{Direction, HardAction, Observation, StopStatus};
use crate::llm::{AgentTag, Gateway, Message};

/// One executed step as shown to the ReAct agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryItem {
    pub action: String,
    pub summary: String,
}

pub struct ReactInput<'a> {
    pub instruction: &'a str,
    /// Advice from a failed earlier attempt.
    pub reflection: Option<&'a str>,
    /// Analyzer notes when taking over from a failed program.
    pub guidance: Option<&'a str>,
    pub history: &'a [HistoryItem],
    pub obs: &'a Observation,
    /// Ask for the soft-coded form in the same reply.
    pub unified: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReactOutput {
    pub observations: String,
    pub completed_tasks: String,
    pub plan_justification: String,
    pub plan_list: String,
    pub next_action_justification: String,
    pub action: HardAction,
    /// Present only in unified mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_code: Option<String>,
}

pub(crate) fn history_text(history: &[HistoryItem]) -> String {
    if history.is_empty() {
        return "No actions yet.\n".into();
    }
    let mut s = String::new();
    for (i, h) in history.iter().enumerate() {
        s.push_str(&format!("Step {}: {}\nSummary: {}\n", i + 1, h.action, h.summary));
    }
    s
}

fn user_message(input: &ReactInput<'_>) -> String {
    let mut s = format!("[Task]\n{}\n\n", input.instruction);
    if let Some(r) = input.reflection {
        s.push_str(&format!("[Reflection From Previous Attempt]\n{r}\n\n"));
    }
    if let Some(g) = input.guidance {
        s.push_str(&format!("[Notes From Failure Analysis]\n{g}\n\n"));
    }
    s.push_str(&format!("[History]\n{}\n[Current Screen]\n{}", history_text(input.history), input.obs.digest()));
    s
}

pub(crate) fn system_prompt(unified: bool) -> String {
    let mut s = prompts::render(prompts::REACT, &[("env_ops", prompts::ENV_OPS)]);
    if unified {
        s.push_str(prompts::REACT_UNIFIED);
    }
    s
}

/// Asks for the next action.
pub fn react_step(gw: &Gateway, input: &ReactInput<'_>) -> Result<ReactOutput, AgentError> {
    let messages = vec![Message::system(system_prompt(input.unified)), Message::user(user_message(input))];
    converse(gw, AgentTag::React, messages, |reply| parse_reply(reply, input.unified))
}

fn parse_reply(reply: &str, unified: bool) -> Result<ReactOutput, AgentError> {
    let f = |d: String| AgentError::format(AgentTag::React, d);
    let secs = sections(reply);
    let get = |name: &str| require(&secs, name).map(str::to_string).map_err(f);
    let action_body = get("Action")?;
    let code = first_code(&action_body).map_err(f)?;
    let action = action_from_code(&code)?;
    let soft_code = match section(&secs, "Soft-coded Action") {
        Some(body) if unified => Some(first_code(body).map_err(f)?),
        _ => None,
    };
    Ok(ReactOutput {
        observations: get("Observations")?,
        completed_tasks: get("Completed Tasks")?,
        plan_justification: get("Plan Justification")?,
        plan_list: get("Plan List")?,
        next_action_justification: get("Next Action Justification")?,
        action,
        soft_code,
    })
}

const ACTIONS: [&str; 9] = ["click", "long_press", "input_text", "swipe", "open_app", "wait", "go_back", "stop", "answer"];

/// Converts a one-line `env_op.<action>(...)` call with literal arguments.
pub fn action_from_code(code: &str) -> Result<HardAction, AgentError> {
    let f = |d: String| AgentError::format(AgentTag::React, d);
    let lines = code_lines(code);
    if lines.len() != 1 {
        return Err(f(format!("expected exactly one action line, found {}", lines.len())));
    }
    let expr = parse_expr(lines[0]).map_err(|e| f(format!("action does not parse: {e}")))?;
    let Some(method) = expr.env_op_method() else {
        return Err(f(format!("expected an env_op call, found {}", lines[0])));
    };
    if !ACTIONS.contains(&method) {
        return Err(AgentError::UnknownAction(method.to_string()));
    }
    let Expr::Call { args, .. } = &expr else { unreachable!("env_op_method implies a call") };
    let mut vals = Vec::new();
    for a in args {
        match a {
            Arg::Pos(e) | Arg::Kw(_, e) => {
                vals.push(const_eval(e).ok_or_else(|| f(format!("argument of {method} is not a literal")))?)
            }
            Arg::Star2(_) => return Err(f("**kwargs is not allowed in a hard action".into())),
        }
    }
    let int = |i: usize| match vals.get(i) {
        Some(Value::Int(n)) => Ok(*n),
        _ => Err(f(format!("{method} needs an integer index"))),
    };
    let text = |i: usize| match vals.get(i) {
        Some(Value::Str(s)) => Ok(s.clone()),
        _ => Err(f(format!("{method} needs a string argument"))),
    };
    let arity = |n: usize| {
        if vals.len() == n {
            Ok(())
        } else {
            Err(f(format!("{method} takes {n} argument(s), got {}", vals.len())))
        }
    };
    let action = match method {
        "click" => {
            arity(1)?;
            HardAction::click(int(0)?)
        }
        "long_press" => {
            arity(1)?;
            HardAction::long_press(int(0)?)
        }
        "input_text" => {
            arity(2)?;
            HardAction::input_text(int(0)?, text(1)?)
        }
        "swipe" => {
            arity(1)?;
            let d = text(0)?;
            HardAction::swipe(Direction::parse(&d).ok_or_else(|| f(format!("unknown direction {d:?}")))?)
        }
        "open_app" => {
            arity(1)?;
            HardAction::open_app(text(0)?)
        }
        "wait" => {
            arity(0)?;
            HardAction::wait()
        }
        "go_back" => {
            arity(0)?;
            HardAction::go_back()
        }
        "stop" => {
            arity(1)?;
            let s = text(0)?;
            HardAction::stop(StopStatus::parse(&s).ok_or_else(|| f(format!("unknown stop status {s:?}")))?)
        }
        _ => {
            arity(1)?;
            HardAction::answer(text(0)?)
        }
    };
    Ok(action)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reply(action: &str) -> String {
        format!(
            "### Observations:\nhome\n### Completed Tasks:\nnone\n### Plan Justification:\nok\n### Plan List:\n1. go\n### Next Action Justification:\nbecause\n### Action:\n```python\n{action}\n```\n"
        )
    }

    #[test]
    fn parses_all_sections() {
        let out = parse_reply(&reply("env_op.input_text(3, \"hi\")"), false).unwrap();
        assert_eq!(out.action, HardAction::input_text(3, "hi"));
        assert_eq!(out.plan_list, "1. go");
        assert_eq!(out.soft_code, None);
    }

    #[test]
    fn actions_round_trip_through_display() {
        for a in [
            HardAction::click(0),
            HardAction::long_press(4),
            HardAction::input_text(2, "a \"quoted\" text"),
            HardAction::swipe(Direction::Up),
            HardAction::open_app("Markor"),
            HardAction::wait(),
            HardAction::go_back(),
            HardAction::stop(StopStatus::Infeasible),
            HardAction::answer("42"),
        ] {
            assert_eq!(action_from_code(&a.to_string()).unwrap(), a);
        }
    }

    #[test]
    fn rejects_bad_actions() {
        assert!(matches!(action_from_code("env_op.teleport(1)"), Err(AgentError::UnknownAction(m)) if m == "teleport"));
        assert!(matches!(action_from_code("env_op.click(1)\nenv_op.click(2)"), Err(AgentError::Format { .. })));
        assert!(matches!(action_from_code("env_op.click(x)"), Err(AgentError::Format { .. })));
        assert!(matches!(action_from_code("click(1)"), Err(AgentError::Format { .. })));
        assert!(matches!(parse_reply("### Action:\n```python\nenv_op.wait()\n```", false), Err(AgentError::Format { .. })));
    }

    #[test]
    fn unified_reply_carries_code() {
        let r = format!("{}### Soft-coded Action:\n```python\nenv_op.wait()\n```\n", reply("env_op.wait()"));
        assert_eq!(parse_reply(&r, true).unwrap().soft_code.as_deref(), Some("env_op.wait()\n"));
        assert_eq!(parse_reply(&r, false).unwrap().soft_code, None);
    }
}
