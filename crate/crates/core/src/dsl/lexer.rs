//! Indentation-aware tokenizer.
//!
//! Own-line comments become [`Tok::Comment`] tokens placed just after the
//! indentation change of the next code line, so they always belong to the
//! block that code line opens or continues. Trailing comments and comments
//! inside brackets are dropped.

use super::ParseError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    Name(String),
    Int(i64),
    Str(String),
    Op(&'static str),
    Comment(String),
    Newline,
    Indent,
    Dedent,
    Eof,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub tok: Tok,
    pub line: u32,
    pub col: u32,
}

const OPS: [&str; 29] = [
    "**", "//=", "%=", "//", "==", "!=", "<=", ">=", "+=", "-=", "*=", "->", "(", ")", "[", "]", "{", "}", ",", ":", ".", "=",
    "<", ">", "+", "-", "*", "%", ";",
];

struct Lexer<'a> {
    src: &'a [u8],
    text: &'a str,
    pos: usize,
    line: u32,
    line_start: usize,
    depth: usize,
    indents: Vec<usize>,
    out: Vec<Token>,
    pending_comments: Vec<Token>,
}

pub fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut lx = Lexer {
        src: text.as_bytes(),
        text,
        pos: 0,
        line: 1,
        line_start: 0,
        depth: 0,
        indents: vec![0],
        out: Vec::new(),
        pending_comments: Vec::new(),
    };
    lx.run()?;
    Ok(lx.out)
}

impl Lexer<'_> {
    fn col(&self) -> u32 {
        (self.pos - self.line_start) as u32 + 1
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError::Syntax { line: self.line, col: self.col(), expected: vec![], found: msg.into() }
    }

    fn push(&mut self, tok: Tok, line: u32, col: u32) {
        self.out.push(Token { tok, line, col });
    }

    fn peek(&self, off: usize) -> Option<u8> {
        self.src.get(self.pos + off).copied()
    }

    fn newline(&mut self) {
        self.pos += 1;
        self.line += 1;
        self.line_start = self.pos;
    }

    fn run(&mut self) -> Result<(), ParseError> {
        let mut at_line_start = true;
        while self.pos < self.src.len() {
            if at_line_start && self.depth == 0 {
                at_line_start = false;
                if self.line_indent()? {
                    at_line_start = true;
                    continue;
                }
            }
            let c = self.src[self.pos];
            match c {
                b'\n' => {
                    if self.depth == 0 && !matches!(self.out.last().map(|t| &t.tok), Some(Tok::Newline) | None) {
                        let (l, col) = (self.line, self.col());
                        self.push(Tok::Newline, l, col);
                    }
                    self.newline();
                    at_line_start = self.depth == 0;
                }
                b' ' | b'\t' | b'\r' => self.pos += 1,
                b'\\' if self.peek(1) == Some(b'\n') => {
                    self.pos += 1;
                    self.newline();
                }
                b'#' => {
                    // trailing comment
                    while self.pos < self.src.len() && self.src[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b'"' | b'\'' => self.string(false)?,
                b'0'..=b'9' => self.number()?,
                c if c.is_ascii_alphabetic() || c == b'_' || c >= 0x80 => self.name()?,
                _ => self.op()?,
            }
        }
        if !matches!(self.out.last().map(|t| &t.tok), Some(Tok::Newline) | None) {
            let (l, c) = (self.line, self.col());
            self.push(Tok::Newline, l, c);
        }
        // comments at end of input stay in the innermost open block
        let pending = std::mem::take(&mut self.pending_comments);
        for t in pending {
            let (l, c) = (t.line, t.col);
            self.out.push(t);
            self.push(Tok::Newline, l, c);
        }
        while self.indents.len() > 1 {
            self.indents.pop();
            let (l, c) = (self.line, self.col());
            self.push(Tok::Dedent, l, c);
        }
        let (l, c) = (self.line, self.col());
        self.push(Tok::Eof, l, c);
        Ok(())
    }

    /// Handles indentation at the start of a logical line. Returns true when the
    /// line was blank or a comment and has been consumed entirely.
    fn line_indent(&mut self) -> Result<bool, ParseError> {
        let mut width = 0usize;
        while let Some(c) = self.peek(0) {
            match c {
                b' ' => width += 1,
                b'\t' => width = (width / 4 + 1) * 4,
                b'\r' => {}
                _ => break,
            }
            self.pos += 1;
        }
        match self.peek(0) {
            None => Ok(true),
            Some(b'\n') => {
                self.newline();
                Ok(true)
            }
            Some(b'#') => {
                let (line, col) = (self.line, self.col());
                let start = self.pos + 1;
                while self.pos < self.src.len() && self.src[self.pos] != b'\n' {
                    self.pos += 1;
                }
                let text = self.text[start..self.pos].trim_end().to_string();
                self.pending_comments.push(Token { tok: Tok::Comment(text), line, col });
                if self.pos < self.src.len() {
                    self.newline();
                }
                Ok(true)
            }
            Some(_) => {
                let (line, col) = (self.line, self.col());
                let cur = *self.indents.last().expect("indent stack");
                if width > cur {
                    self.indents.push(width);
                    self.push(Tok::Indent, line, col);
                } else if width < cur {
                    while width < *self.indents.last().expect("indent stack") {
                        self.indents.pop();
                        self.push(Tok::Dedent, line, col);
                    }
                    if width != *self.indents.last().expect("indent stack") {
                        return Err(ParseError::Syntax {
                            line,
                            col,
                            expected: vec![],
                            found: "inconsistent dedent".into(),
                        });
                    }
                }
                let pending = std::mem::take(&mut self.pending_comments);
                for t in pending {
                    let (l, c) = (t.line, t.col);
                    self.out.push(t);
                    self.push(Tok::Newline, l, c);
                }
                Ok(false)
            }
        }
    }

    fn name(&mut self) -> Result<(), ParseError> {
        let (line, col) = (self.line, self.col());
        let start = self.pos;
        while let Some(c) = self.peek(0) {
            if c.is_ascii_alphanumeric() || c == b'_' || c >= 0x80 {
                self.pos += 1;
            } else {
                break;
            }
        }
        let word = &self.text[start..self.pos];
        if matches!(self.peek(0), Some(b'"' | b'\'')) {
            match word.to_ascii_lowercase().as_str() {
                "f" | "rf" | "fr" => {
                    return Err(ParseError::Unsupported { construct: "f-string".into(), line });
                }
                "b" | "rb" | "br" => {
                    return Err(ParseError::Unsupported { construct: "bytes literal".into(), line });
                }
                "r" => return self.string(true),
                "u" => return self.string(false),
                _ => {}
            }
        }
        self.push(Tok::Name(word.to_string()), line, col);
        Ok(())
    }

    fn number(&mut self) -> Result<(), ParseError> {
        let (line, col) = (self.line, self.col());
        let start = self.pos;
        while let Some(c) = self.peek(0) {
            if c.is_ascii_digit() || c == b'_' {
                self.pos += 1;
            } else {
                break;
            }
        }
        if matches!(self.peek(0), Some(b'.' | b'e' | b'E')) && self.peek(1).is_some_and(|c| c.is_ascii_digit()) {
            return Err(ParseError::Unsupported { construct: "float literal".into(), line });
        }
        let digits: String = self.text[start..self.pos].chars().filter(|c| *c != '_').collect();
        let n = digits.parse::<i64>().map_err(|_| self.err(format!("integer literal {digits} out of range")))?;
        self.push(Tok::Int(n), line, col);
        Ok(())
    }

    fn string(&mut self, raw: bool) -> Result<(), ParseError> {
        let (line, col) = (self.line, self.col());
        let q = self.src[self.pos];
        let triple = self.peek(1) == Some(q) && self.peek(2) == Some(q);
        self.pos += if triple { 3 } else { 1 };
        let mut out = String::new();
        loop {
            let Some(c) = self.peek(0) else {
                return Err(ParseError::Syntax { line, col, expected: vec![], found: "unterminated string".into() });
            };
            if c == q && (!triple || (self.peek(1) == Some(q) && self.peek(2) == Some(q))) {
                self.pos += if triple { 3 } else { 1 };
                break;
            }
            match c {
                b'\n' if !triple => {
                    return Err(ParseError::Syntax { line, col, expected: vec![], found: "unterminated string".into() });
                }
                b'\n' => {
                    out.push('\n');
                    self.newline();
                }
                b'\\' if !raw => {
                    let e = self.peek(1).ok_or_else(|| self.err("unterminated string"))?;
                    self.pos += 2;
                    match e {
                        b'n' => out.push('\n'),
                        b't' => out.push('\t'),
                        b'r' => out.push('\r'),
                        b'0' => out.push('\0'),
                        b'\\' => out.push('\\'),
                        b'\'' => out.push('\''),
                        b'"' => out.push('"'),
                        b'\n' => {
                            self.pos -= 1;
                            self.newline();
                        }
                        b'x' | b'u' => {
                            let n = if e == b'x' { 2 } else { 4 };
                            let hex = self.text.get(self.pos..self.pos + n).ok_or_else(|| self.err("bad escape"))?;
                            let v = u32::from_str_radix(hex, 16).map_err(|_| self.err("bad escape"))?;
                            out.push(char::from_u32(v).ok_or_else(|| self.err("bad escape"))?);
                            self.pos += n;
                        }
                        _ => {
                            out.push('\\');
                            self.pos -= 1;
                        }
                    }
                }
                _ => {
                    let ch = self.text[self.pos..].chars().next().expect("char");
                    out.push(ch);
                    self.pos += ch.len_utf8();
                }
            }
        }
        self.push(Tok::Str(out), line, col);
        Ok(())
    }

    fn op(&mut self) -> Result<(), ParseError> {
        let (line, col) = (self.line, self.col());
        let rest = &self.text[self.pos..];
        if rest.starts_with('/') && !rest.starts_with("//") {
            return Err(ParseError::Unsupported { construct: "/ (true division)".into(), line });
        }
        for op in OPS {
            if rest.starts_with(op) {
                match op {
                    "(" | "[" | "{" => self.depth += 1,
                    ")" | "]" | "}" => self.depth = self.depth.saturating_sub(1),
                    _ => {}
                }
                self.pos += op.len();
                self.push(Tok::Op(op), line, col);
                return Ok(());
            }
        }
        let ch = rest.chars().next().expect("char");
        Err(self.err(format!("unexpected character {ch:?}")))
    }
}
