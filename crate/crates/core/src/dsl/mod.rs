//! A small Python-like language for soft-coded actions and RPA programs.

pub mod ast;
pub mod check;
pub mod interp;
mod lexer;
pub mod parser;
pub mod printer;
pub mod value;

use thiserror::Error;

pub use ast::Program;
pub use check::{static_check, Diagnostic};
pub use interp::{const_eval, run, Breakpoint, ExecStep, ExecTrace, Mllm, NoMllm, Outcome, RunError, Services};
pub use parser::{parse, parse_expr};
pub use printer::{print_expr, print_program};
pub use value::Value;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at {line}:{col}: found {found}{}", fmt_expected(.expected))]
    Syntax { line: u32, col: u32, expected: Vec<String>, found: String },
    #[error("unsupported construct `{construct}` at line {line}")]
    Unsupported { construct: String, line: u32 },
}

impl ParseError {
    pub fn line(&self) -> u32 {
        match self {
            ParseError::Syntax { line, .. } | ParseError::Unsupported { line, .. } => *line,
        }
    }
}

fn fmt_expected(expected: &[String]) -> String {
    if expected.is_empty() {
        String::new()
    } else {
        format!(", expected {}", expected.join(" or "))
    }
}
