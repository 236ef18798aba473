//! Recursive-descent parser.

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::ParseError;

/// Python keywords outside the language; hitting one is reported by name.
const UNSUPPORTED_KEYWORDS: [&str; 14] = [
    "import", "from", "lambda", "class", "try", "except", "finally", "with", "raise", "global", "nonlocal", "del",
    "yield", "async",
];

const RESERVED: [&str; 17] = [
    "def", "if", "elif", "else", "while", "for", "in", "assert", "break", "continue", "pass", "return", "and", "or",
    "not", "is", "await",
];

pub fn parse(src: &str) -> Result<Program, ParseError> {
    let toks = tokenize(src)?;
    let mut p = Parser { toks, pos: 0 };
    p.program()
}

/// Parses a single expression (used for action lines and call expressions in
/// agent responses).
pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let toks = tokenize(src)?;
    let mut p = Parser { toks, pos: 0 };
    p.skip_newlines();
    let e = p.expr()?;
    p.skip_newlines();
    p.expect_tok(&Tok::Eof, "end of input")?;
    Ok(e)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Name(n) => format!("name {n:?}"),
        Tok::Int(i) => format!("integer {i}"),
        Tok::Str(s) => format!("string {s:?}"),
        Tok::Op(o) => format!("{o:?}"),
        Tok::Comment(_) => "comment".into(),
        Tok::Newline => "end of line".into(),
        Tok::Indent => "indent".into(),
        Tok::Dedent => "dedent".into(),
        Tok::Eof => "end of input".into(),
    }
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, off: usize) -> &Tok {
        let i = (self.pos + off).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn line(&self) -> u32 {
        self.toks[self.pos].line
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> ParseError {
        let t = &self.toks[self.pos];
        ParseError::Syntax {
            line: t.line,
            col: t.col,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: describe(&t.tok),
        }
    }

    fn is_op(&self, op: &str) -> bool {
        matches!(self.peek(), Tok::Op(o) if *o == op)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Name(n) if n == kw)
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if self.is_op(op) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_op(&mut self, op: &str) -> Result<(), ParseError> {
        if self.eat_op(op) {
            Ok(())
        } else {
            Err(self.error(&[&format!("{op:?}")]))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.error(&[kw]))
        }
    }

    fn expect_tok(&mut self, t: &Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == t {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&[what]))
        }
    }

    fn skip_newlines(&mut self) {
        while matches!(self.peek(), Tok::Newline) {
            self.bump();
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Name(n) => {
                self.check_unsupported()?;
                if RESERVED.contains(&n.as_str()) || matches!(n.as_str(), "True" | "False" | "None") {
                    return Err(self.error(&["identifier"]));
                }
                self.bump();
                Ok(n)
            }
            _ => Err(self.error(&["identifier"])),
        }
    }

    fn check_unsupported(&self) -> Result<(), ParseError> {
        if let Tok::Name(n) = self.peek() {
            if UNSUPPORTED_KEYWORDS.contains(&n.as_str()) {
                let construct = if n == "from" { "import" } else { n.as_str() };
                return Err(ParseError::Unsupported { construct: construct.to_string(), line: self.line() });
            }
        }
        Ok(())
    }

    // ---- program level ----

    fn program(&mut self) -> Result<Program, ParseError> {
        let mut leading = Vec::new();
        loop {
            match self.peek().clone() {
                Tok::Newline => {
                    self.bump();
                }
                Tok::Comment(c) => {
                    let line = self.line();
                    self.bump();
                    leading.push(Stmt { kind: StmtKind::Comment(c), line });
                }
                _ => break,
            }
        }
        if self.is_kw("def") {
            let mut prog = self.function()?;
            prog.doc = parse_doc(&leading);
            // anything after the function may only be comments
            loop {
                match self.peek() {
                    Tok::Newline | Tok::Comment(_) => {
                        self.bump();
                    }
                    Tok::Eof => break,
                    _ => return Err(self.error(&["end of input"])),
                }
            }
            return Ok(prog);
        }
        let mut body = leading;
        while !matches!(self.peek(), Tok::Eof) {
            if matches!(self.peek(), Tok::Newline) {
                self.bump();
                continue;
            }
            if matches!(self.peek(), Tok::Indent) {
                return Err(self.error(&["statement"]));
            }
            self.statement(&mut body)?;
        }
        Ok(Program { body, ..Default::default() })
    }

    fn function(&mut self) -> Result<Program, ParseError> {
        self.expect_kw("def")?;
        let name = self.ident()?;
        self.expect_op("(")?;
        let mut params: Vec<Param> = Vec::new();
        while !self.is_op(")") {
            let line = self.line();
            if self.is_op("*") || self.is_op("**") {
                return Err(ParseError::Unsupported { construct: "variadic parameters".into(), line });
            }
            let pname = self.ident()?;
            if params.iter().any(|p| p.name == pname) {
                return Err(ParseError::Syntax {
                    line,
                    col: self.toks[self.pos.saturating_sub(1)].col,
                    expected: vec!["distinct parameter name".into()],
                    found: format!("duplicate parameter {pname}"),
                });
            }
            let annotation = if self.eat_op(":") { Some(self.type_expr()?) } else { None };
            let default = if self.eat_op("=") { Some(self.expr()?) } else { None };
            if default.is_none() && params.last().is_some_and(|p| p.default.is_some()) {
                return Err(self.error(&["default value"]));
            }
            params.push(Param { name: pname, annotation, default });
            if !self.eat_op(",") {
                break;
            }
        }
        self.expect_op(")")?;
        let returns = if self.eat_op("->") { Some(self.type_expr()?) } else { None };
        self.expect_op(":")?;
        let body = self.block()?;
        Ok(Program { name: Some(name), params, returns, doc: ProgramDoc::default(), body })
    }

    fn type_expr(&mut self) -> Result<String, ParseError> {
        let mut s = match self.peek().clone() {
            Tok::Name(n) => {
                self.bump();
                n
            }
            _ => return Err(self.error(&["type name"])),
        };
        while self.eat_op(".") {
            s.push('.');
            s.push_str(&self.ident()?);
        }
        if self.eat_op("[") {
            s.push('[');
            let mut first = true;
            while !self.is_op("]") {
                if !first {
                    s.push_str(", ");
                }
                first = false;
                s.push_str(&self.type_expr()?);
                if !self.eat_op(",") {
                    break;
                }
            }
            self.expect_op("]")?;
            s.push(']');
        }
        Ok(s)
    }

    // ---- statements ----

    fn block(&mut self) -> Result<Vec<Stmt>, ParseError> {
        let mut body = Vec::new();
        if !matches!(self.peek(), Tok::Newline) {
            // one-line body after the colon
            self.simple_statement(&mut body)?;
            return Ok(body);
        }
        self.skip_newlines();
        if !matches!(self.peek(), Tok::Indent) {
            return Err(self.error(&["indented block"]));
        }
        self.bump();
        while !matches!(self.peek(), Tok::Dedent | Tok::Eof) {
            if matches!(self.peek(), Tok::Newline) {
                self.bump();
                continue;
            }
            self.statement(&mut body)?;
        }
        if matches!(self.peek(), Tok::Dedent) {
            self.bump();
        }
        Ok(body)
    }

    fn end_of_statement(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            Tok::Newline => {
                self.bump();
                Ok(())
            }
            Tok::Eof | Tok::Dedent => Ok(()),
            Tok::Op(";") => Err(ParseError::Unsupported { construct: "semicolon".into(), line: self.line() }),
            _ => Err(self.error(&["end of line"])),
        }
    }

    fn statement(&mut self, out: &mut Vec<Stmt>) -> Result<(), ParseError> {
        let line = self.line();
        self.check_unsupported()?;
        let kind = match self.peek().clone() {
            Tok::Comment(c) => {
                self.bump();
                self.end_of_statement()?;
                StmtKind::Comment(c)
            }
            Tok::Name(kw) if kw == "def" => {
                return Err(ParseError::Unsupported { construct: "nested def".into(), line });
            }
            Tok::Name(kw) if kw == "if" => {
                self.bump();
                let mut branches = Vec::new();
                let cond = self.expr()?;
                self.expect_op(":")?;
                branches.push((cond, self.block()?));
                let mut orelse = None;
                loop {
                    if self.eat_kw("elif") {
                        let cond = self.expr()?;
                        self.expect_op(":")?;
                        branches.push((cond, self.block()?));
                    } else if self.eat_kw("else") {
                        self.expect_op(":")?;
                        orelse = Some(self.block()?);
                        break;
                    } else {
                        break;
                    }
                }
                StmtKind::If { branches, orelse }
            }
            Tok::Name(kw) if kw == "while" => {
                self.bump();
                let cond = self.expr()?;
                self.expect_op(":")?;
                let body = self.block()?;
                if self.is_kw("else") {
                    return Err(ParseError::Unsupported { construct: "loop else".into(), line: self.line() });
                }
                StmtKind::While { cond, body }
            }
            Tok::Name(kw) if kw == "for" => {
                self.bump();
                let var = self.ident()?;
                if self.is_op(",") {
                    return Err(ParseError::Unsupported { construct: "tuple unpacking".into(), line });
                }
                self.expect_kw("in")?;
                let iter = self.expr()?;
                self.expect_op(":")?;
                let body = self.block()?;
                if self.is_kw("else") {
                    return Err(ParseError::Unsupported { construct: "loop else".into(), line: self.line() });
                }
                StmtKind::For { var, iter, body }
            }
            _ => return self.simple_statement(out),
        };
        out.push(Stmt { kind, line });
        Ok(())
    }

    fn simple_statement(&mut self, out: &mut Vec<Stmt>) -> Result<(), ParseError> {
        let line = self.line();
        self.check_unsupported()?;
        let kind = if self.eat_kw("pass") {
            None
        } else if self.eat_kw("break") {
            Some(StmtKind::Break)
        } else if self.eat_kw("continue") {
            Some(StmtKind::Continue)
        } else if self.eat_kw("return") {
            let v = if matches!(self.peek(), Tok::Newline | Tok::Eof | Tok::Dedent) { None } else { Some(self.expr()?) };
            Some(StmtKind::Return(v))
        } else if self.eat_kw("assert") {
            let cond = self.expr()?;
            let msg = if self.eat_op(",") { Some(self.expr()?) } else { None };
            Some(StmtKind::Assert { cond, msg })
        } else {
            let e = self.expr()?;
            if ["=", "+=", "-=", "*=", "//=", "%="].iter().any(|op| self.is_op(op)) {
                let target = match e {
                    Expr::Name(n) => n,
                    Expr::Subscript { .. } | Expr::Attr { .. } => {
                        return Err(ParseError::Unsupported { construct: "assignment to subscript or attribute".into(), line });
                    }
                    _ => return Err(self.error(&["assignment target"])),
                };
                let op = match self.bump() {
                    Tok::Op("=") => None,
                    Tok::Op("+=") => Some(BinOp::Add),
                    Tok::Op("-=") => Some(BinOp::Sub),
                    Tok::Op("//=") => Some(BinOp::FloorDiv),
                    Tok::Op("%=") => Some(BinOp::Mod),
                    _ => Some(BinOp::Mul),
                };
                let value = self.expr()?;
                if self.is_op("=") {
                    return Err(ParseError::Unsupported { construct: "chained assignment".into(), line });
                }
                Some(match op {
                    None => StmtKind::Assign { target, value },
                    Some(op) => StmtKind::AugAssign { target, op, value },
                })
            } else if self.is_op(",") {
                return Err(ParseError::Unsupported { construct: "tuple".into(), line });
            } else {
                Some(StmtKind::Expr(e))
            }
        };
        self.end_of_statement()?;
        if let Some(kind) = kind {
            out.push(Stmt { kind, line });
        }
        Ok(())
    }

    // ---- expressions ----

    fn expr(&mut self) -> Result<Expr, ParseError> {
        if self.is_kw("lambda") {
            return Err(ParseError::Unsupported { construct: "lambda".into(), line: self.line() });
        }
        let e = self.or_expr()?;
        if self.eat_kw("if") {
            let cond = self.or_expr()?;
            self.expect_kw("else")?;
            let otherwise = self.expr()?;
            return Ok(Expr::IfExp { cond: Box::new(cond), then: Box::new(e), otherwise: Box::new(otherwise) });
        }
        Ok(e)
    }

    fn or_expr(&mut self) -> Result<Expr, ParseError> {
        let first = self.and_expr()?;
        if !self.is_kw("or") {
            return Ok(first);
        }
        let mut values = vec![first];
        while self.eat_kw("or") {
            values.push(self.and_expr()?);
        }
        Ok(Expr::BoolOp { op: BoolOp::Or, values })
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        let first = self.not_expr()?;
        if !self.is_kw("and") {
            return Ok(first);
        }
        let mut values = vec![first];
        while self.eat_kw("and") {
            values.push(self.not_expr()?);
        }
        Ok(Expr::BoolOp { op: BoolOp::And, values })
    }

    fn not_expr(&mut self) -> Result<Expr, ParseError> {
        if self.eat_kw("not") {
            let operand = self.not_expr()?;
            return Ok(Expr::Unary { op: UnaryOp::Not, operand: Box::new(operand) });
        }
        self.comparison()
    }

    fn cmp_op(&mut self) -> Option<CmpOp> {
        let op = match self.peek() {
            Tok::Op("==") => CmpOp::Eq,
            Tok::Op("!=") => CmpOp::Ne,
            Tok::Op("<") => CmpOp::Lt,
            Tok::Op("<=") => CmpOp::Le,
            Tok::Op(">") => CmpOp::Gt,
            Tok::Op(">=") => CmpOp::Ge,
            Tok::Name(n) if n == "in" => CmpOp::In,
            Tok::Name(n) if n == "not" && matches!(self.peek_at(1), Tok::Name(m) if m == "in") => {
                self.bump();
                CmpOp::NotIn
            }
            Tok::Name(n) if n == "is" => {
                if matches!(self.peek_at(1), Tok::Name(m) if m == "not") {
                    self.bump();
                    CmpOp::IsNot
                } else {
                    CmpOp::Is
                }
            }
            _ => return None,
        };
        self.bump();
        Some(op)
    }

    fn comparison(&mut self) -> Result<Expr, ParseError> {
        let left = self.arith()?;
        let mut ops = Vec::new();
        while let Some(op) = self.cmp_op() {
            ops.push((op, self.arith()?));
        }
        if ops.is_empty() {
            Ok(left)
        } else {
            Ok(Expr::Compare { left: Box::new(left), ops })
        }
    }

    fn arith(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.term()?;
        loop {
            let op = if self.eat_op("+") {
                BinOp::Add
            } else if self.eat_op("-") {
                BinOp::Sub
            } else {
                break;
            };
            let right = self.term()?;
            left = Expr::Binary { op, left: Box::new(left), right: Box::new(right) };
        }
        Ok(left)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.unary()?;
        loop {
            let op = if self.eat_op("*") {
                BinOp::Mul
            } else if self.eat_op("//") {
                BinOp::FloorDiv
            } else if self.eat_op("%") {
                BinOp::Mod
            } else {
                break;
            };
            let right = self.unary()?;
            left = Expr::Binary { op, left: Box::new(left), right: Box::new(right) };
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat_op("-") {
            let operand = self.unary()?;
            return Ok(match operand {
                Expr::Int(n) if n >= 0 => Expr::Int(-n),
                other => Expr::Unary { op: UnaryOp::Neg, operand: Box::new(other) },
            });
        }
        if self.eat_op("+") {
            return self.unary();
        }
        if self.is_op("**") {
            return Err(ParseError::Unsupported { construct: "power operator".into(), line: self.line() });
        }
        let e = self.postfix()?;
        if self.is_op("**") {
            return Err(ParseError::Unsupported { construct: "power operator".into(), line: self.line() });
        }
        Ok(e)
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.atom()?;
        loop {
            if self.eat_op("(") {
                let args = self.call_args()?;
                e = Expr::Call { func: Box::new(e), args };
            } else if self.eat_op(".") {
                let name = self.ident()?;
                e = Expr::Attr { value: Box::new(e), name };
            } else if self.eat_op("[") {
                let index = self.subscript()?;
                self.expect_op("]")?;
                e = Expr::Subscript { value: Box::new(e), index: Box::new(index) };
            } else {
                return Ok(e);
            }
        }
    }

    fn subscript(&mut self) -> Result<Index, ParseError> {
        let lower = if self.is_op(":") { None } else { Some(self.expr()?) };
        if !self.eat_op(":") {
            return lower.map(Index::Item).ok_or_else(|| self.error(&["index"]));
        }
        let upper = if self.is_op("]") { None } else { Some(self.expr()?) };
        if self.is_op(":") {
            return Err(ParseError::Unsupported { construct: "slice step".into(), line: self.line() });
        }
        Ok(Index::Slice(lower, upper))
    }

    fn call_args(&mut self) -> Result<Vec<Arg>, ParseError> {
        let mut args = Vec::new();
        let mut seen_kw = false;
        while !self.is_op(")") {
            if self.eat_op("**") {
                args.push(Arg::Star2(self.expr()?));
                seen_kw = true;
            } else if self.is_op("*") {
                return Err(ParseError::Unsupported { construct: "star arguments".into(), line: self.line() });
            } else if matches!(self.peek(), Tok::Name(_)) && matches!(self.peek_at(1), Tok::Op("=")) {
                let name = self.ident()?;
                self.expect_op("=")?;
                args.push(Arg::Kw(name, self.expr()?));
                seen_kw = true;
            } else {
                if seen_kw {
                    return Err(self.error(&["keyword argument"]));
                }
                args.push(Arg::Pos(self.expr()?));
            }
            if !self.eat_op(",") {
                break;
            }
        }
        self.expect_op(")")?;
        Ok(args)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        self.check_unsupported()?;
        let line = self.line();
        match self.peek().clone() {
            Tok::Int(n) => {
                self.bump();
                Ok(Expr::Int(n))
            }
            Tok::Str(s) => {
                self.bump();
                let mut s = s;
                // adjacent literals concatenate
                while let Tok::Str(more) = self.peek().clone() {
                    self.bump();
                    s.push_str(&more);
                }
                Ok(Expr::Str(s))
            }
            Tok::Name(n) => match n.as_str() {
                "True" => {
                    self.bump();
                    Ok(Expr::Bool(true))
                }
                "False" => {
                    self.bump();
                    Ok(Expr::Bool(false))
                }
                "None" => {
                    self.bump();
                    Ok(Expr::None)
                }
                "await" => Err(ParseError::Unsupported { construct: "await".into(), line }),
                _ => Ok(Expr::Name(self.ident()?)),
            },
            Tok::Op("(") => {
                self.bump();
                if self.is_op(")") {
                    return Err(ParseError::Unsupported { construct: "tuple".into(), line });
                }
                let e = self.expr()?;
                if self.is_kw("for") {
                    return Err(ParseError::Unsupported { construct: "comprehension".into(), line });
                }
                if self.is_op(",") {
                    return Err(ParseError::Unsupported { construct: "tuple".into(), line });
                }
                self.expect_op(")")?;
                Ok(e)
            }
            Tok::Op("[") => {
                self.bump();
                let mut items = Vec::new();
                while !self.is_op("]") {
                    items.push(self.expr()?);
                    if self.is_kw("for") {
                        return Err(ParseError::Unsupported { construct: "comprehension".into(), line });
                    }
                    if !self.eat_op(",") {
                        break;
                    }
                }
                self.expect_op("]")?;
                Ok(Expr::List(items))
            }
            Tok::Op("{") => {
                self.bump();
                let mut items = Vec::new();
                while !self.is_op("}") {
                    if self.is_op("**") {
                        return Err(ParseError::Unsupported { construct: "dict unpacking".into(), line });
                    }
                    let k = self.expr()?;
                    if !self.is_op(":") {
                        return Err(ParseError::Unsupported { construct: "set literal".into(), line });
                    }
                    self.bump();
                    let v = self.expr()?;
                    if self.is_kw("for") {
                        return Err(ParseError::Unsupported { construct: "comprehension".into(), line });
                    }
                    items.push((k, v));
                    if !self.eat_op(",") {
                        break;
                    }
                }
                self.expect_op("}")?;
                Ok(Expr::Dict(items))
            }
            _ => Err(self.error(&["expression"])),
        }
    }
}

/// Reads the `### Func Description:` / `### Params Description:` /
/// `### Example Usage:` header from the comments preceding a function.
fn parse_doc(comments: &[Stmt]) -> ProgramDoc {
    #[derive(PartialEq)]
    enum Section {
        None,
        Desc,
        Params,
        Example,
    }
    let mut doc = ProgramDoc::default();
    let mut section = Section::None;
    let mut desc = Vec::new();
    let mut example = Vec::new();
    for c in comments {
        let StmtKind::Comment(raw) = &c.kind else { continue };
        let heading = raw.trim_start_matches('#').trim();
        if raw.starts_with("##") {
            section = match heading.trim_end_matches(':').trim() {
                "Func Description" => Section::Desc,
                "Params Description" => Section::Params,
                "Example Usage" => Section::Example,
                _ => Section::None,
            };
            continue;
        }
        let text = raw.strip_prefix(' ').unwrap_or(raw);
        match section {
            Section::Desc => desc.push(text.to_string()),
            Section::Example => example.push(text.to_string()),
            Section::Params => {
                if let Some(p) = parse_param_doc(text) {
                    doc.params.push(p);
                }
            }
            Section::None => {}
        }
    }
    doc.description = desc.join("\n").trim().to_string();
    doc.example_usage = example.join("\n").trim().to_string();
    doc
}

/// `- name (type): doc` or `- name: doc`.
pub(crate) fn parse_param_doc(line: &str) -> Option<ParamDoc> {
    let rest = line.trim().strip_prefix('-')?.trim();
    let (head, doc) = rest.split_once(':').map(|(h, d)| (h.trim(), d.trim())).unwrap_or((rest, ""));
    let (name, ty) = match head.split_once('(') {
        Some((n, t)) => (n.trim(), Some(t.trim().trim_end_matches(')').trim().to_string())),
        None => (head, None),
    };
    if name.is_empty() || !name.chars().all(|c| c.is_alphanumeric() || c == '_') {
        return None;
    }
    Some(ParamDoc { name: name.to_string(), ty, doc: doc.to_string() })
}
