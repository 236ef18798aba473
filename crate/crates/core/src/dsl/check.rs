//! Lint pass run before a program is accepted into the bank.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ast::*;
use super::interp::{BUILTINS, ENV_OPS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub line: u32,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Reports unbounded loops, unknown `env_op` methods, assertions without a
/// message, code after `env_op.stop`, and names that are never bound.
pub fn static_check(program: &Program) -> Vec<Diagnostic> {
    let mut bound: BTreeSet<String> = program.params.iter().map(|p| p.name.clone()).collect();
    collect_bound(&program.body, &mut bound);
    bound.insert("env_op".into());
    bound.extend(BUILTINS.iter().map(|s| s.to_string()));
    let snippet = program.name.is_none();
    let mut out = Vec::new();
    check_block(&program.body, &bound, snippet, &mut out);
    out.sort_by_key(|d| d.line);
    out
}

fn collect_bound(body: &[Stmt], out: &mut BTreeSet<String>) {
    for s in body {
        match &s.kind {
            StmtKind::Assign { target, .. } | StmtKind::AugAssign { target, .. } => {
                out.insert(target.clone());
            }
            StmtKind::For { var, body, .. } => {
                out.insert(var.clone());
                collect_bound(body, out);
            }
            StmtKind::While { body, .. } => collect_bound(body, out),
            StmtKind::If { branches, orelse } => {
                for (_, b) in branches {
                    collect_bound(b, out);
                }
                if let Some(b) = orelse {
                    collect_bound(b, out);
                }
            }
            _ => {}
        }
    }
}

fn is_stop(s: &Stmt) -> bool {
    matches!(&s.kind, StmtKind::Expr(e) if e.env_op_method() == Some("stop"))
}

fn check_block(body: &[Stmt], bound: &BTreeSet<String>, snippet: bool, out: &mut Vec<Diagnostic>) {
    let mut stopped = false;
    for s in body {
        if matches!(s.kind, StmtKind::Comment(_)) {
            continue;
        }
        if stopped {
            out.push(Diagnostic { line: s.line, message: "dead code after stop".into() });
            stopped = false;
        }
        let mut exprs: Vec<&Expr> = Vec::new();
        match &s.kind {
            StmtKind::Assign { value, .. } | StmtKind::AugAssign { value, .. } => exprs.push(value),
            StmtKind::If { branches, orelse } => {
                for (c, b) in branches {
                    exprs.push(c);
                    check_block(b, bound, snippet, out);
                }
                if let Some(b) = orelse {
                    check_block(b, bound, snippet, out);
                }
            }
            StmtKind::While { cond, body } => {
                exprs.push(cond);
                if !loop_bounded(cond, body) {
                    out.push(Diagnostic { line: s.line, message: "unbounded loop".into() });
                }
                check_block(body, bound, snippet, out);
            }
            StmtKind::For { iter, body, .. } => {
                exprs.push(iter);
                check_block(body, bound, snippet, out);
            }
            StmtKind::Assert { cond, msg } => {
                exprs.push(cond);
                match msg {
                    Some(m) => exprs.push(m),
                    None => out.push(Diagnostic { line: s.line, message: "assert without message".into() }),
                }
            }
            StmtKind::Expr(e) => exprs.push(e),
            StmtKind::Return(Some(e)) => exprs.push(e),
            _ => {}
        }
        for e in exprs {
            check_expr(e, s.line, bound, snippet, out);
        }
        if is_stop(s) {
            stopped = true;
        }
    }
}

fn check_expr(e: &Expr, line: u32, bound: &BTreeSet<String>, snippet: bool, out: &mut Vec<Diagnostic>) {
    let mut push = |message: String| {
        if !out.iter().any(|d| d.line == line && d.message == message) {
            out.push(Diagnostic { line, message });
        }
    };
    if let Some(m) = e.env_op_method() {
        if !ENV_OPS.contains(&m) {
            push(format!("unknown env_op method {m}"));
        }
    }
    match e {
        // Snippets run with caller-supplied bindings, so free names are allowed.
        Expr::Name(n) if !snippet && !bound.contains(n) => push(format!("undefined name {n}")),
        _ => {}
    }
    for child in children(e) {
        check_expr(child, line, bound, snippet, out);
    }
}

fn children(e: &Expr) -> Vec<&Expr> {
    match e {
        Expr::List(items) => items.iter().collect(),
        Expr::Dict(items) => items.iter().flat_map(|(k, v)| [k, v]).collect(),
        Expr::Attr { value, .. } => vec![value],
        Expr::Call { func, args } => {
            let mut v = vec![func.as_ref()];
            for a in args {
                v.push(match a {
                    Arg::Pos(x) | Arg::Kw(_, x) | Arg::Star2(x) => x,
                });
            }
            v
        }
        Expr::Subscript { value, index } => {
            let mut v = vec![value.as_ref()];
            match index.as_ref() {
                Index::Item(i) => v.push(i),
                Index::Slice(lo, hi) => v.extend(lo.iter().chain(hi.iter())),
            }
            v
        }
        Expr::Unary { operand, .. } => vec![operand],
        Expr::Binary { left, right, .. } => vec![left, right],
        Expr::Compare { left, ops } => std::iter::once(left.as_ref()).chain(ops.iter().map(|(_, r)| r)).collect(),
        Expr::BoolOp { values, .. } => values.iter().collect(),
        Expr::IfExp { cond, then, otherwise } => vec![cond, then, otherwise],
        _ => vec![],
    }
}

/// A `while` counts as bounded when its condition compares a name that the
/// body reassigns, or when the body can `break`/`return`/stop.
fn loop_bounded(cond: &Expr, body: &[Stmt]) -> bool {
    let mut compared = BTreeSet::new();
    compared_names(cond, &mut compared);
    let mut assigned = BTreeSet::new();
    collect_bound(body, &mut assigned);
    compared.iter().any(|n| assigned.contains(n)) || exits(body)
}

fn compared_names(e: &Expr, out: &mut BTreeSet<String>) {
    if let Expr::Compare { left, ops } = e {
        for x in std::iter::once(left.as_ref()).chain(ops.iter().map(|(_, r)| r)) {
            names_in(x, out);
        }
    }
    for c in children(e) {
        compared_names(c, out);
    }
}

fn names_in(e: &Expr, out: &mut BTreeSet<String>) {
    if let Expr::Name(n) = e {
        out.insert(n.clone());
    }
    for c in children(e) {
        names_in(c, out);
    }
}

fn exits(body: &[Stmt]) -> bool {
    body.iter().any(|s| match &s.kind {
        StmtKind::Break | StmtKind::Return(_) => true,
        StmtKind::Expr(_) => is_stop(s),
        StmtKind::If { branches, orelse } => {
            branches.iter().any(|(_, b)| exits(b)) || orelse.as_ref().is_some_and(|b| exits(b))
        }
        // a nested loop's break only leaves the nested loop
        StmtKind::While { body, .. } | StmtKind::For { body, .. } => {
            body.iter().any(|s| matches!(s.kind, StmtKind::Return(_)) || is_stop(s))
        }
        _ => false,
    })
}
