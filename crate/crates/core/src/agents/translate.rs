use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::adapters::{GatewayGrounder, GatewayMllm};
use super::parse::{first_code, require, sections};
use super::react::ReactOutput;
use super::{converse, prompts, AgentError};
use crate::dsl::ast::{Arg, Expr, Stmt, StmtKind};
use crate::dsl::{parse, run, Outcome, Services};
use crate::env::{GuiEnv, HardAction, Observation};
use crate::llm::{AgentTag, Gateway, Message};
use crate::matcher::MatcherConfig;

/// Statement budget when checking a translation.
const CHECK_FUEL: u64 = 1_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoftAction {
    pub thought: String,
    pub code: String,
}

pub struct TranslateInput<'a> {
    pub instruction: &'a str,
    pub react: &'a ReactOutput,
    pub before: &'a Observation,
    pub after: &'a Observation,
    /// The environment as it was before the action; the code is replayed on
    /// a copy of it.
    pub env_before: &'a GuiEnv,
    pub matcher: MatcherConfig,
}

/// Rewrites the executed action into attribute-based code and checks that
/// the code performs the same action on the pre-action screen.
pub fn translate(gw: &Gateway, input: &TranslateInput<'_>) -> Result<SoftAction, AgentError> {
    let system = prompts::render(prompts::TRANSLATOR, &[("code_ops", prompts::CODE_OPS)]);
    let user = format!(
        "[Task]\n{}\n\n[Action Reasoning]\n{}\n\n[Executed Action]\n{}\n\n[Screen Before]\n{}\n[Screen After]\n{}",
        input.instruction,
        input.react.next_action_justification,
        input.react.action,
        input.before.digest(),
        input.after.digest()
    );
    let messages = vec![Message::system(system), Message::user(user)];
    converse(gw, AgentTag::Translator, messages, |reply| {
        let f = |d: String| AgentError::format(AgentTag::Translator, d);
        let secs = sections(reply);
        let thought = require(&secs, "Thought").map_err(f)?.to_string();
        let code = first_code(require(&secs, "Soft-coded Action").map_err(f)?).map_err(f)?;
        check_soft_code(gw, &code, &input.react.action, input.env_before, input.matcher)?;
        Ok(SoftAction { thought, code })
    })
}

/// Checks the shape of `code` and that running it on a copy of `env_before`
/// issues exactly `action`.
pub fn check_soft_code(
    gw: &Gateway,
    code: &str,
    action: &HardAction,
    env_before: &GuiEnv,
    matcher: MatcherConfig,
) -> Result<(), AgentError> {
    let inconsistent = |d: String| AgentError::TranslationInconsistent { expected: action.to_string(), detail: d };
    let program = parse(code).map_err(|e| AgentError::format(AgentTag::Translator, format!("code does not parse: {e}")))?;
    if program.name.is_some() {
        return Err(AgentError::format(AgentTag::Translator, "expected statements, not a function definition"));
    }
    let stmts: Vec<&Stmt> = program.body.iter().filter(|s| !matches!(s.kind, StmtKind::Comment(_))).collect();
    check_shape(&stmts, action).map_err(|d| AgentError::format(AgentTag::Translator, d))?;

    let mut env = env_before.clone();
    let mut grounder = GatewayGrounder::new(gw);
    let mut mllm = GatewayMllm::new(gw);
    let trace = {
        let mut svc = Services::new(&mut grounder, &mut mllm);
        svc.matcher = matcher;
        svc.fuel = CHECK_FUEL;
        run(&program, &BTreeMap::new(), &mut env, &mut svc)
    };
    if let Some(e) = grounder.take_failure().or_else(|| mllm.take_failure()) {
        return Err(e.into());
    }
    let trace = trace.map_err(|e| inconsistent(e.to_string()))?;
    if let Some(bp) = &trace.breakpoint {
        return Err(inconsistent(bp.message.clone()));
    }
    debug_assert_eq!(trace.outcome, Outcome::Completed);
    match trace.steps.as_slice() {
        [only] if only.action == *action => Ok(()),
        [only] => Err(inconsistent(format!("it performs {}", only.action))),
        steps => Err(inconsistent(format!("it performs {} actions", steps.len()))),
    }
}

fn is_env_call(e: &Expr, method: &str) -> bool {
    e.env_op_method() == Some(method)
}

fn check_shape(stmts: &[&Stmt], action: &HardAction) -> Result<(), String> {
    let method = action.kind.as_str();
    let tail = if action.kind.needs_index() { 3 } else { 1 };
    if stmts.len() < tail {
        return Err(format!("expected at least {tail} statement(s)"));
    }
    let (pre, tail) = stmts.split_at(stmts.len() - tail);
    for s in pre {
        match &s.kind {
            StmtKind::Assign { value, .. } if is_env_call(value, "ask_mllm") => {}
            _ => return Err("only `name = env_op.ask_mllm(...)` lines may come before the action".into()),
        }
    }
    if !action.kind.needs_index() {
        return match &tail[0].kind {
            StmtKind::Expr(e) if is_env_call(e, method) => Ok(()),
            _ => Err(format!("expected a single env_op.{method}(...) call")),
        };
    }
    let StmtKind::Assign { target: kw_name, value: Expr::Dict(_) } = &tail[0].kind else {
        return Err("first line must assign a dict of attributes to kwargs".into());
    };
    let StmtKind::Assign { target: idx_name, value: lookup } = &tail[1].kind else {
        return Err("second line must be `index = env_op.find_element(**kwargs)`".into());
    };
    let star_ok = match lookup {
        Expr::Call { args, .. } if is_env_call(lookup, "find_element") => {
            matches!(args.as_slice(), [Arg::Star2(Expr::Name(n))] if n == kw_name)
        }
        _ => false,
    };
    if !star_ok {
        return Err("second line must be `index = env_op.find_element(**kwargs)`".into());
    }
    match &tail[2].kind {
        StmtKind::Expr(call @ Expr::Call { args, .. }) if is_env_call(call, method) => {
            let uses_index = args.iter().any(|a| matches!(a, Arg::Pos(Expr::Name(n)) | Arg::Kw(_, Expr::Name(n)) if n == idx_name));
            if uses_index {
                Ok(())
            } else {
                Err(format!("env_op.{method} must receive the found index"))
            }
        }
        _ => Err(format!("third line must call env_op.{method} with the found index")),
    }
}
