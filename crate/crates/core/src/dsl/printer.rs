//! Canonical source printer. Output always re-parses to the same tree.

use std::fmt::Write;

use super::ast::*;

const INDENT: &str = "    ";

pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    if !p.doc.is_empty() {
        out.push_str(&print_doc(&p.doc));
        out.push_str("### RPA Code:\n");
    }
    match &p.name {
        Some(name) => {
            let params: Vec<String> = p.params.iter().map(print_param).collect();
            let _ = write!(out, "def {name}({})", params.join(", "));
            if let Some(r) = &p.returns {
                let _ = write!(out, " -> {r}");
            }
            out.push_str(":\n");
            print_block(&p.body, 1, &mut out);
        }
        None => {
            for s in &p.body {
                print_stmt(s, 0, &mut out);
            }
        }
    }
    out
}

/// Header comment block describing a function.
pub fn print_doc(doc: &ProgramDoc) -> String {
    let mut out = String::from("### Func Description:\n");
    comment_lines(&doc.description, &mut out);
    out.push_str("\n### Params Description:\n");
    for p in &doc.params {
        let line = match &p.ty {
            Some(ty) => format!("- {} ({ty}): {}", p.name, p.doc),
            None => format!("- {}: {}", p.name, p.doc),
        };
        comment_lines(line.trim_end(), &mut out);
    }
    out.push_str("\n### Example Usage:\n");
    comment_lines(&doc.example_usage, &mut out);
    out.push('\n');
    out
}

fn comment_lines(text: &str, out: &mut String) {
    if text.is_empty() {
        return;
    }
    for line in text.lines() {
        if line.is_empty() {
            out.push_str("#\n");
        } else {
            let _ = writeln!(out, "# {line}");
        }
    }
}

pub fn print_param(p: &Param) -> String {
    let mut s = p.name.clone();
    match (&p.annotation, &p.default) {
        (Some(a), Some(d)) => {
            let _ = write!(s, ": {a} = {}", print_expr(d));
        }
        (Some(a), None) => {
            let _ = write!(s, ": {a}");
        }
        (None, Some(d)) => {
            let _ = write!(s, "={}", print_expr(d));
        }
        (None, None) => {}
    }
    s
}

pub fn print_block(body: &[Stmt], depth: usize, out: &mut String) {
    for s in body {
        print_stmt(s, depth, out);
    }
    if body.iter().all(|s| matches!(s.kind, StmtKind::Comment(_))) {
        let _ = writeln!(out, "{}pass", INDENT.repeat(depth));
    }
}

/// One statement without trailing newline handling, for trace labels.
pub fn print_stmt_line(s: &Stmt) -> String {
    let mut out = String::new();
    print_stmt(s, 0, &mut out);
    out.lines().next().unwrap_or_default().to_string()
}

pub fn print_stmts(body: &[Stmt]) -> String {
    let mut out = String::new();
    for s in body {
        print_stmt(s, 0, &mut out);
    }
    out
}

fn print_stmt(s: &Stmt, depth: usize, out: &mut String) {
    let pad = INDENT.repeat(depth);
    match &s.kind {
        StmtKind::Assign { target, value } => {
            let _ = writeln!(out, "{pad}{target} = {}", print_expr(value));
        }
        StmtKind::AugAssign { target, op, value } => {
            let _ = writeln!(out, "{pad}{target} {}= {}", op.as_str(), print_expr(value));
        }
        StmtKind::If { branches, orelse } => {
            for (i, (cond, body)) in branches.iter().enumerate() {
                let kw = if i == 0 { "if" } else { "elif" };
                let _ = writeln!(out, "{pad}{kw} {}:", print_expr(cond));
                print_block(body, depth + 1, out);
            }
            if let Some(body) = orelse {
                let _ = writeln!(out, "{pad}else:");
                print_block(body, depth + 1, out);
            }
        }
        StmtKind::While { cond, body } => {
            let _ = writeln!(out, "{pad}while {}:", print_expr(cond));
            print_block(body, depth + 1, out);
        }
        StmtKind::For { var, iter, body } => {
            let _ = writeln!(out, "{pad}for {var} in {}:", print_expr(iter));
            print_block(body, depth + 1, out);
        }
        StmtKind::Assert { cond, msg } => match msg {
            Some(m) => {
                let _ = writeln!(out, "{pad}assert {}, {}", print_expr(cond), print_expr(m));
            }
            None => {
                let _ = writeln!(out, "{pad}assert {}", print_expr(cond));
            }
        },
        StmtKind::Expr(e) => {
            let _ = writeln!(out, "{pad}{}", print_expr(e));
        }
        StmtKind::Break => {
            let _ = writeln!(out, "{pad}break");
        }
        StmtKind::Continue => {
            let _ = writeln!(out, "{pad}continue");
        }
        StmtKind::Return(v) => match v {
            Some(e) => {
                let _ = writeln!(out, "{pad}return {}", print_expr(e));
            }
            None => {
                let _ = writeln!(out, "{pad}return");
            }
        },
        StmtKind::Comment(c) => {
            let _ = writeln!(out, "{pad}#{c}");
        }
    }
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::IfExp { .. } => 0,
        Expr::BoolOp { op: BoolOp::Or, .. } => 1,
        Expr::BoolOp { op: BoolOp::And, .. } => 2,
        Expr::Unary { op: UnaryOp::Not, .. } => 3,
        Expr::Compare { .. } => 4,
        Expr::Binary { op: BinOp::Add | BinOp::Sub, .. } => 5,
        Expr::Binary { .. } => 6,
        Expr::Unary { op: UnaryOp::Neg, .. } => 7,
        Expr::Int(n) if *n < 0 => 7,
        _ => 8,
    }
}

pub fn print_expr(e: &Expr) -> String {
    let mut s = String::new();
    expr(e, 0, &mut s);
    s
}

fn expr(e: &Expr, min: u8, out: &mut String) {
    if prec(e) < min {
        out.push('(');
        expr(e, 0, out);
        out.push(')');
        return;
    }
    match e {
        Expr::Int(n) => {
            let _ = write!(out, "{n}");
        }
        Expr::Str(s) => quote(s, out),
        Expr::Bool(true) => out.push_str("True"),
        Expr::Bool(false) => out.push_str("False"),
        Expr::None => out.push_str("None"),
        Expr::Name(n) => out.push_str(n),
        Expr::List(items) => {
            out.push('[');
            for (i, it) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                expr(it, 0, out);
            }
            out.push(']');
        }
        Expr::Dict(items) => {
            out.push('{');
            for (i, (k, v)) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                expr(k, 0, out);
                out.push_str(": ");
                expr(v, 0, out);
            }
            out.push('}');
        }
        Expr::Attr { value, name } => {
            expr(value, 8, out);
            out.push('.');
            out.push_str(name);
        }
        Expr::Call { func, args } => {
            expr(func, 8, out);
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                match a {
                    Arg::Pos(v) => expr(v, 0, out),
                    Arg::Kw(k, v) => {
                        out.push_str(k);
                        out.push('=');
                        expr(v, 0, out);
                    }
                    Arg::Star2(v) => {
                        out.push_str("**");
                        expr(v, 8, out);
                    }
                }
            }
            out.push(')');
        }
        Expr::Subscript { value, index } => {
            expr(value, 8, out);
            out.push('[');
            match index.as_ref() {
                Index::Item(i) => expr(i, 0, out),
                Index::Slice(lo, hi) => {
                    if let Some(lo) = lo {
                        expr(lo, 0, out);
                    }
                    out.push(':');
                    if let Some(hi) = hi {
                        expr(hi, 0, out);
                    }
                }
            }
            out.push(']');
        }
        Expr::Unary { op: UnaryOp::Not, operand } => {
            out.push_str("not ");
            expr(operand, 3, out);
        }
        Expr::Unary { op: UnaryOp::Neg, operand } => {
            out.push('-');
            expr(operand, 7, out);
        }
        Expr::Binary { op, left, right } => {
            let p = prec(e);
            expr(left, p, out);
            let _ = write!(out, " {} ", op.as_str());
            expr(right, p + 1, out);
        }
        Expr::Compare { left, ops } => {
            expr(left, 5, out);
            for (op, r) in ops {
                let _ = write!(out, " {} ", op.as_str());
                expr(r, 5, out);
            }
        }
        Expr::BoolOp { op, values } => {
            let (kw, p) = match op {
                BoolOp::Or => (" or ", 2),
                BoolOp::And => (" and ", 3),
            };
            for (i, v) in values.iter().enumerate() {
                if i > 0 {
                    out.push_str(kw);
                }
                expr(v, p, out);
            }
        }
        Expr::IfExp { cond, then, otherwise } => {
            expr(then, 1, out);
            out.push_str(" if ");
            expr(cond, 1, out);
            out.push_str(" else ");
            expr(otherwise, 0, out);
        }
    }
}

fn quote(s: &str, out: &mut String) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if (c as u32) < 0x20 || c == '\u{7f}' => {
                let _ = write!(out, "\\x{:02x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
}
