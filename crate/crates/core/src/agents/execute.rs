use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::build::RpaFunction;
use super::parse::{code_lines, first_code};
use super::{converse, prompts, AgentError};
use crate::dsl::ast::{Arg, Expr};
use crate::dsl::{const_eval, parse_expr, Value};
use crate::llm::{AgentTag, Gateway, Message};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutorCall {
    pub name: String,
    /// Values as printed in the call, e.g. `"x.md"`.
    pub args: BTreeMap<String, String>,
}

impl ExecutorCall {
    pub fn values(&self) -> BTreeMap<String, Value> {
        self.args
            .iter()
            .map(|(k, v)| (k.clone(), parse_expr(v).ok().and_then(|e| const_eval(&e)).unwrap_or(Value::None)))
            .collect()
    }
}

/// Asks for the argument values of `rpa` for a new task.
pub fn fill_parameters(gw: &Gateway, rpa: &RpaFunction, instruction: &str) -> Result<ExecutorCall, AgentError> {
    let system = prompts::render(
        prompts::EXECUTOR,
        &[
            ("skill_description", &rpa.description),
            ("skill_params", &rpa.params_text()),
            ("example_usage", &rpa.example_usage),
        ],
    );
    let messages = vec![Message::system(system), Message::user(format!("New Task:\n{instruction}\n"))];
    converse(gw, AgentTag::Executor, messages, |reply| parse_call(reply, rpa))
}

fn parse_call(reply: &str, rpa: &RpaFunction) -> Result<ExecutorCall, AgentError> {
    let f = |d: String| AgentError::format(AgentTag::Executor, d);
    let code = first_code(reply).map_err(f)?;
    let lines = code_lines(&code);
    if lines.len() != 1 {
        return Err(f(format!("expected one call, found {} lines", lines.len())));
    }
    let expr = parse_expr(lines[0]).map_err(|e| f(format!("call does not parse: {e}")))?;
    let Expr::Call { func, args } = &expr else {
        return Err(f("expected a function call".into()));
    };
    match func.as_ref() {
        Expr::Name(n) if *n == rpa.name => {}
        _ => return Err(f(format!("the function must be called as {}", rpa.name))),
    }
    let mut out = BTreeMap::new();
    for (i, a) in args.iter().enumerate() {
        let (name, value) = match a {
            Arg::Kw(k, v) => (k.clone(), v),
            Arg::Pos(v) => match rpa.params.get(i) {
                Some(p) => (p.name.clone(), v),
                None => return Err(f("too many positional arguments".into())),
            },
            Arg::Star2(_) => return Err(f("**kwargs is not allowed".into())),
        };
        if !rpa.params.iter().any(|p| p.name == name) {
            return Err(AgentError::UnknownParam(name));
        }
        let v = const_eval(value).ok_or_else(|| f(format!("argument {name} is not a literal")))?;
        out.insert(name, v.repr());
    }
    Ok(ExecutorCall { name: rpa.name.clone(), args: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::build::RpaParam;

    fn rpa() -> RpaFunction {
        RpaFunction {
            name: "make_note".into(),
            description: "d".into(),
            params: vec![
                RpaParam { name: "file_name".into(), ty: Some("str".into()), doc: "name".into() },
                RpaParam { name: "text".into(), ty: None, doc: "body".into() },
            ],
            example_usage: "make_note(file_name=\"a.md\")".into(),
            source: String::new(),
            thought: String::new(),
            conclusion: String::new(),
        }
    }

    #[test]
    fn keyword_and_positional() {
        let c = parse_call("```python\nmake_note(\"a.md\", text=\"hi \\\"you\\\"\")\n```", &rpa()).unwrap();
        assert_eq!(c.args["file_name"], "\"a.md\"");
        assert_eq!(c.values()["text"], Value::str("hi \"you\""));
    }

    #[test]
    fn renamed_parameter_is_rejected() {
        let r = parse_call("```python\nmake_note(note_name=\"a\")\n```", &rpa());
        assert!(matches!(r, Err(AgentError::UnknownParam(p)) if p == "note_name"));
        let r = parse_call("```python\nother(file_name=\"a\")\n```", &rpa());
        assert!(matches!(r, Err(AgentError::Format { .. })));
    }
}
