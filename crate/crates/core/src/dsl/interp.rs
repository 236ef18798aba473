//! Tree-walking interpreter. `env_op.*` calls are routed to the environment,
//! the matcher and the multimodal model; every environment-affecting call is
//! recorded as a trace step.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ast::*;
use super::printer::print_stmt_line;
use super::value::Value;
use crate::env::{Direction, EnvError, GuiEnv, HardAction, Observation, StopStatus};
use crate::matcher::{self, Grounder, MatchError, MatchSpec, MatcherConfig};

pub const DEFAULT_FUEL: u64 = 10_000;

/// Upper bound on eagerly materialized sequences (`range`, string repetition).
const MAX_SEQUENCE: i64 = 100_000;

pub const ENV_OPS: [&str; 13] = [
    "open_app",
    "click",
    "long_press",
    "input_text",
    "swipe",
    "wait",
    "go_back",
    "stop",
    "answer",
    "find_element",
    "get_cur_ui_element_list",
    "ask_mllm",
    "click_xpath",
];

pub const BUILTINS: [&str; 9] = ["str", "int", "len", "range", "bool", "print", "min", "max", "abs"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunError {
    #[error("missing argument for parameter {0}")]
    UnboundParam(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("name {0} is not defined")]
    NameError(String),
    #[error("fuel exhausted after {0} statements")]
    FuelExhausted(u64),
    #[error("{call} failed: {err}")]
    Env { call: String, err: EnvError },
    #[error("{0}")]
    Match(MatchError),
    #[error("ask_mllm failed: {0}")]
    Mllm(String),
    #[error("{0}")]
    Value(String),
    #[error("bad call: {0}")]
    BadCall(String),
    #[error("'{0}' outside loop")]
    OutsideLoop(&'static str),
}

/// Answers free-form questions about the current screen.
pub trait Mllm {
    fn ask(&mut self, question: &str, output_format: &str, obs: &Observation) -> Result<String, String>;
}

/// Placeholder when no multimodal model is configured.
#[derive(Debug, Default)]
pub struct NoMllm;

impl Mllm for NoMllm {
    fn ask(&mut self, _q: &str, _f: &str, _obs: &Observation) -> Result<String, String> {
        Err("no multimodal model configured".into())
    }
}

/// External services available to a running program.
pub struct Services<'a> {
    pub grounder: &'a mut dyn Grounder,
    pub mllm: &'a mut dyn Mllm,
    pub matcher: MatcherConfig,
    pub fuel: u64,
}

impl<'a> Services<'a> {
    pub fn new(grounder: &'a mut dyn Grounder, mllm: &'a mut dyn Mllm) -> Self {
        Services { grounder, mllm, matcher: MatcherConfig::default(), fuel: DEFAULT_FUEL }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    AssertFailed,
    RuntimeError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecStep {
    pub line: u32,
    /// Source of the statement that issued the call.
    pub source: String,
    pub action: HardAction,
    pub obs_before: Observation,
    pub obs_after: Observation,
    pub rho: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakpoint {
    /// Number of environment steps completed before the failure; the tail of a
    /// repair resumes at this position.
    pub t_star: usize,
    pub line: u32,
    pub message: String,
    pub observation: Observation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecTrace {
    pub steps: Vec<ExecStep>,
    pub outcome: Outcome,
    pub breakpoint: Option<Breakpoint>,
    pub error: Option<RunError>,
    pub statements: u64,
    pub asserts_passed: u32,
    pub log: Vec<String>,
    pub final_observation: Observation,
}

impl ExecTrace {
    /// Trace of a run that failed before its first statement (for example
    /// when the arguments could not be filled in).
    pub fn not_started(message: impl Into<String>, obs: &Observation) -> Self {
        ExecTrace {
            steps: Vec::new(),
            outcome: Outcome::RuntimeError,
            breakpoint: Some(Breakpoint { t_star: 0, line: 0, message: message.into(), observation: obs.clone() }),
            error: None,
            statements: 0,
            asserts_passed: 0,
            log: Vec::new(),
            final_observation: obs.clone(),
        }
    }
}

enum Flow {
    Normal,
    Break,
    Continue,
    Return,
}

enum Halt {
    Stopped,
    Assert { line: u32, message: String },
    Error { line: u32, err: RunError },
}

type Exec<T> = Result<T, Halt>;
type Kwargs = Vec<(String, Value)>;

struct Interp<'e, 's, 'a> {
    env: &'e mut GuiEnv,
    svc: &'s mut Services<'a>,
    vars: BTreeMap<String, Value>,
    steps: Vec<ExecStep>,
    statements: u64,
    asserts_passed: u32,
    log: Vec<String>,
    line: u32,
    source: String,
}

/// Binds `args` to the program's parameters, applying defaults.
pub fn bind_args(program: &Program, args: &BTreeMap<String, Value>) -> Result<BTreeMap<String, Value>, RunError> {
    if program.name.is_none() {
        return Ok(args.clone());
    }
    for k in args.keys() {
        if program.param(k).is_none() {
            return Err(RunError::UnknownParam(k.clone()));
        }
    }
    let mut vars = BTreeMap::new();
    for p in &program.params {
        let v = match (args.get(&p.name), &p.default) {
            (Some(v), _) => v.clone(),
            (None, Some(d)) => const_eval(d).ok_or_else(|| RunError::TypeMismatch(format!("default of {}", p.name)))?,
            (None, None) => return Err(RunError::UnboundParam(p.name.clone())),
        };
        vars.insert(p.name.clone(), v);
    }
    Ok(vars)
}

/// Value of a literal expression (numbers, strings, booleans, None, negated
/// integers, and lists or dicts of those).
pub fn const_eval(e: &Expr) -> Option<Value> {
    Some(match e {
        Expr::Int(i) => Value::Int(*i),
        Expr::Unary { op: UnaryOp::Neg, operand } => match operand.as_ref() {
            Expr::Int(i) => Value::Int(i.checked_neg()?),
            _ => return None,
        },
        Expr::Str(s) => Value::Str(s.clone()),
        Expr::Bool(b) => Value::Bool(*b),
        Expr::None => Value::None,
        Expr::List(items) => Value::List(items.iter().map(const_eval).collect::<Option<_>>()?),
        Expr::Dict(items) => Value::Dict(
            items.iter().map(|(k, v)| Some((const_eval(k)?, const_eval(v)?))).collect::<Option<_>>()?,
        ),
        _ => return None,
    })
}

/// Executes `program` against `env`. Failures inside the program (assertions,
/// runtime errors, fuel exhaustion) are reported in the trace; only argument
/// binding problems are returned as errors.
pub fn run(
    program: &Program,
    args: &BTreeMap<String, Value>,
    env: &mut GuiEnv,
    svc: &mut Services<'_>,
) -> Result<ExecTrace, RunError> {
    let vars = bind_args(program, args)?;
    let mut it = Interp {
        env,
        svc,
        vars,
        steps: Vec::new(),
        statements: 0,
        asserts_passed: 0,
        log: Vec::new(),
        line: 0,
        source: String::new(),
    };
    let halt = match it.block(&program.body) {
        Ok(Flow::Break) => Some(Halt::Error { line: it.line, err: RunError::OutsideLoop("break") }),
        Ok(Flow::Continue) => Some(Halt::Error { line: it.line, err: RunError::OutsideLoop("continue") }),
        Ok(_) => None,
        Err(h) => Some(h),
    };
    let observation = it.env.observe().clone();
    let (outcome, breakpoint, error) = match halt {
        None | Some(Halt::Stopped) => (Outcome::Completed, None, None),
        Some(Halt::Assert { line, message }) => (
            Outcome::AssertFailed,
            Some(Breakpoint { t_star: it.steps.len(), line, message, observation: observation.clone() }),
            None,
        ),
        Some(Halt::Error { line, err }) => (
            Outcome::RuntimeError,
            Some(Breakpoint {
                t_star: it.steps.len(),
                line,
                message: format!("Runtime error at line {line}: {err}"),
                observation: observation.clone(),
            }),
            Some(err),
        ),
    };
    Ok(ExecTrace {
        steps: it.steps,
        outcome,
        breakpoint,
        error,
        statements: it.statements,
        asserts_passed: it.asserts_passed,
        log: it.log,
        final_observation: observation,
    })
}

impl Interp<'_, '_, '_> {
    fn fail<T>(&self, err: RunError) -> Exec<T> {
        Err(Halt::Error { line: self.line, err })
    }

    fn tick(&mut self) -> Exec<()> {
        self.statements += 1;
        if self.statements > self.svc.fuel {
            return self.fail(RunError::FuelExhausted(self.svc.fuel));
        }
        Ok(())
    }

    fn block(&mut self, body: &[Stmt]) -> Exec<Flow> {
        for s in body {
            match self.stmt(s)? {
                Flow::Normal => {}
                other => return Ok(other),
            }
        }
        Ok(Flow::Normal)
    }

    fn enter(&mut self, s: &Stmt) {
        self.line = s.line;
        self.source = print_stmt_line(s);
    }

    fn stmt(&mut self, s: &Stmt) -> Exec<Flow> {
        if let StmtKind::Comment(_) = s.kind {
            return Ok(Flow::Normal);
        }
        self.enter(s);
        self.tick()?;
        match &s.kind {
            StmtKind::Assign { target, value } => {
                let v = self.eval(value)?;
                self.vars.insert(target.clone(), v);
            }
            StmtKind::AugAssign { target, op, value } => {
                let cur = match self.vars.get(target) {
                    Some(v) => v.clone(),
                    None => return self.fail(RunError::NameError(target.clone())),
                };
                let rhs = self.eval(value)?;
                let v = self.binop(*op, cur, rhs)?;
                self.vars.insert(target.clone(), v);
            }
            StmtKind::If { branches, orelse } => {
                for (cond, body) in branches {
                    self.enter(s);
                    if self.eval(cond)?.truthy() {
                        return self.block(body);
                    }
                }
                if let Some(body) = orelse {
                    return self.block(body);
                }
            }
            StmtKind::While { cond, body } => loop {
                self.enter(s);
                if !self.eval(cond)?.truthy() {
                    break;
                }
                match self.block(body)? {
                    Flow::Break => break,
                    Flow::Return => return Ok(Flow::Return),
                    Flow::Normal | Flow::Continue => {}
                }
                self.enter(s);
                self.tick()?;
            },
            StmtKind::For { var, iter, body } => {
                let items = self.iter_values(iter)?;
                for item in items {
                    self.vars.insert(var.clone(), item);
                    match self.block(body)? {
                        Flow::Break => break,
                        Flow::Return => return Ok(Flow::Return),
                        Flow::Normal | Flow::Continue => {}
                    }
                    self.enter(s);
                    self.tick()?;
                }
            }
            StmtKind::Assert { cond, msg } => {
                if !self.eval(cond)?.truthy() {
                    let message = match msg {
                        Some(m) => self.eval(m)?.to_string(),
                        None => "Assertion failed.".to_string(),
                    };
                    return Err(Halt::Assert { line: s.line, message });
                }
                self.asserts_passed += 1;
            }
            StmtKind::Expr(e) => {
                self.eval(e)?;
            }
            StmtKind::Break => return Ok(Flow::Break),
            StmtKind::Continue => return Ok(Flow::Continue),
            StmtKind::Return(v) => {
                if let Some(v) = v {
                    self.eval(v)?;
                }
                return Ok(Flow::Return);
            }
            StmtKind::Comment(_) => {}
        }
        Ok(Flow::Normal)
    }

    fn iter_values(&mut self, iter: &Expr) -> Exec<Vec<Value>> {
        let v = self.eval(iter)?;
        Ok(match v {
            Value::List(items) => items,
            Value::Str(s) => s.chars().map(|c| Value::Str(c.to_string())).collect(),
            Value::Dict(d) => d.into_iter().map(|(k, _)| k).collect(),
            other => return self.fail(RunError::TypeMismatch(format!("{} is not iterable", other.type_name()))),
        })
    }

    fn eval(&mut self, e: &Expr) -> Exec<Value> {
        Ok(match e {
            Expr::Int(i) => Value::Int(*i),
            Expr::Str(s) => Value::Str(s.clone()),
            Expr::Bool(b) => Value::Bool(*b),
            Expr::None => Value::None,
            Expr::Name(n) => match self.vars.get(n) {
                Some(v) => v.clone(),
                None => return self.fail(RunError::NameError(n.clone())),
            },
            Expr::List(items) => {
                let mut out = Vec::with_capacity(items.len());
                for it in items {
                    out.push(self.eval(it)?);
                }
                Value::List(out)
            }
            Expr::Dict(items) => {
                let mut out: Vec<(Value, Value)> = Vec::with_capacity(items.len());
                for (k, v) in items {
                    let k = self.eval(k)?;
                    let v = self.eval(v)?;
                    match out.iter_mut().find(|(ek, _)| *ek == k) {
                        Some(slot) => slot.1 = v,
                        None => out.push((k, v)),
                    }
                }
                Value::Dict(out)
            }
            Expr::Attr { name, .. } => {
                return self.fail(RunError::TypeMismatch(format!("attribute {name} is only supported in calls")));
            }
            Expr::Call { func, args } => self.call(func, args)?,
            Expr::Subscript { value, index } => {
                let v = self.eval(value)?;
                match index.as_ref() {
                    Index::Item(i) => {
                        let i = self.eval(i)?;
                        self.index(v, i)?
                    }
                    Index::Slice(lo, hi) => {
                        let lo = match lo {
                            Some(e) => Some(self.int(e)?),
                            None => None,
                        };
                        let hi = match hi {
                            Some(e) => Some(self.int(e)?),
                            None => None,
                        };
                        self.slice(v, lo, hi)?
                    }
                }
            }
            Expr::Unary { op: UnaryOp::Not, operand } => Value::Bool(!self.eval(operand)?.truthy()),
            Expr::Unary { op: UnaryOp::Neg, operand } => match self.eval(operand)? {
                Value::Int(i) => Value::Int(i.checked_neg().ok_or(()).or_else(|_| self.fail(overflow()))?),
                Value::Bool(b) => Value::Int(-(b as i64)),
                other => return self.fail(RunError::TypeMismatch(format!("bad operand for -: {}", other.type_name()))),
            },
            Expr::Binary { op, left, right } => {
                let l = self.eval(left)?;
                let r = self.eval(right)?;
                self.binop(*op, l, r)?
            }
            Expr::Compare { left, ops } => {
                let mut l = self.eval(left)?;
                for (op, re) in ops {
                    let r = self.eval(re)?;
                    if !self.compare(*op, &l, &r)? {
                        return Ok(Value::Bool(false));
                    }
                    l = r;
                }
                Value::Bool(true)
            }
            Expr::BoolOp { op, values } => {
                let mut last = Value::None;
                for v in values {
                    last = self.eval(v)?;
                    let t = last.truthy();
                    if (*op == BoolOp::Or && t) || (*op == BoolOp::And && !t) {
                        return Ok(last);
                    }
                }
                last
            }
            Expr::IfExp { cond, then, otherwise } => {
                if self.eval(cond)?.truthy() {
                    self.eval(then)?
                } else {
                    self.eval(otherwise)?
                }
            }
        })
    }

    fn int(&mut self, e: &Expr) -> Exec<i64> {
        match self.eval(e)? {
            Value::Int(i) => Ok(i),
            Value::Bool(b) => Ok(b as i64),
            other => self.fail(RunError::TypeMismatch(format!("expected int, got {}", other.type_name()))),
        }
    }

    fn binop(&self, op: BinOp, l: Value, r: Value) -> Exec<Value> {
        use Value::*;
        let v = match (op, l, r) {
            (BinOp::Add, Str(a), Str(b)) => Str(a + &b),
            (BinOp::Add, List(mut a), List(b)) => {
                a.extend(b);
                List(a)
            }
            (BinOp::Mul, Str(s), Int(n)) | (BinOp::Mul, Int(n), Str(s)) => {
                if n.saturating_mul(s.len() as i64) > MAX_SEQUENCE {
                    return self.fail(RunError::Value("string repetition too large".into()));
                }
                Str(s.repeat(n.max(0) as usize))
            }
            (op, l, r) => {
                let (a, b) = match (&l, &r) {
                    (Int(a), Int(b)) => (*a, *b),
                    (Bool(a), Int(b)) => (*a as i64, *b),
                    (Int(a), Bool(b)) => (*a, *b as i64),
                    (Bool(a), Bool(b)) => (*a as i64, *b as i64),
                    _ => {
                        return self.fail(RunError::TypeMismatch(format!(
                            "unsupported operand types for {}: {} and {}",
                            op.as_str(),
                            l.type_name(),
                            r.type_name()
                        )))
                    }
                };
                let res = match op {
                    BinOp::Add => a.checked_add(b),
                    BinOp::Sub => a.checked_sub(b),
                    BinOp::Mul => a.checked_mul(b),
                    BinOp::FloorDiv | BinOp::Mod if b == 0 => {
                        return self.fail(RunError::Value("integer division or modulo by zero".into()));
                    }
                    BinOp::FloorDiv => a.checked_div(b).map(|q| if (a % b != 0) && ((a < 0) != (b < 0)) { q - 1 } else { q }),
                    BinOp::Mod => a.checked_rem(b).map(|r| if r != 0 && ((r < 0) != (b < 0)) { r + b } else { r }),
                };
                match res {
                    Some(v) => Int(v),
                    Option::None => return self.fail(overflow()),
                }
            }
        };
        Ok(v)
    }

    fn compare(&self, op: CmpOp, l: &Value, r: &Value) -> Exec<bool> {
        use Value::*;
        let eq = |l: &Value, r: &Value| match (l, r) {
            (Int(a), Bool(b)) | (Bool(b), Int(a)) => *a == *b as i64,
            _ => l == r,
        };
        Ok(match op {
            CmpOp::Eq => eq(l, r),
            CmpOp::Ne => !eq(l, r),
            CmpOp::Is => l == r,
            CmpOp::IsNot => l != r,
            CmpOp::In | CmpOp::NotIn => {
                let found = match (l, r) {
                    (Str(a), Str(b)) => b.contains(a.as_str()),
                    (x, List(items)) => items.iter().any(|i| eq(i, x)),
                    (x, Dict(items)) => items.iter().any(|(k, _)| eq(k, x)),
                    _ => {
                        return self.fail(RunError::TypeMismatch(format!(
                            "'in' needs a container on the right, got {}",
                            r.type_name()
                        )))
                    }
                };
                if op == CmpOp::In {
                    found
                } else {
                    !found
                }
            }
            CmpOp::Lt | CmpOp::Le | CmpOp::Gt | CmpOp::Ge => {
                let ord = match (l, r) {
                    (Int(a), Int(b)) => a.cmp(b),
                    (Str(a), Str(b)) => a.cmp(b),
                    (Bool(a), Int(b)) => (*a as i64).cmp(b),
                    (Int(a), Bool(b)) => a.cmp(&(*b as i64)),
                    _ => {
                        return self.fail(RunError::TypeMismatch(format!(
                            "'{}' not supported between {} and {}",
                            op.as_str(),
                            l.type_name(),
                            r.type_name()
                        )))
                    }
                };
                match op {
                    CmpOp::Lt => ord.is_lt(),
                    CmpOp::Le => ord.is_le(),
                    CmpOp::Gt => ord.is_gt(),
                    _ => ord.is_ge(),
                }
            }
        })
    }

    fn index(&self, v: Value, i: Value) -> Exec<Value> {
        match (v, i) {
            (Value::List(items), Value::Int(i)) => {
                let n = items.len() as i64;
                let j = if i < 0 { i + n } else { i };
                if j < 0 || j >= n {
                    return self.fail(RunError::Value(format!("list index {i} out of range")));
                }
                Ok(items[j as usize].clone())
            }
            (Value::Str(s), Value::Int(i)) => {
                let chars: Vec<char> = s.chars().collect();
                let n = chars.len() as i64;
                let j = if i < 0 { i + n } else { i };
                if j < 0 || j >= n {
                    return self.fail(RunError::Value(format!("string index {i} out of range")));
                }
                Ok(Value::Str(chars[j as usize].to_string()))
            }
            (d @ Value::Dict(_), k) => match d.dict_get(&k) {
                Some(v) => Ok(v.clone()),
                None => self.fail(RunError::Value(format!("key {} not found", k.repr()))),
            },
            (v, i) => self.fail(RunError::TypeMismatch(format!("cannot index {} with {}", v.type_name(), i.type_name()))),
        }
    }

    fn slice(&self, v: Value, lo: Option<i64>, hi: Option<i64>) -> Exec<Value> {
        let bounds = |n: usize| {
            let n = n as i64;
            let fix = |x: i64| if x < 0 { (x + n).max(0) } else { x.min(n) };
            let a = lo.map(fix).unwrap_or(0);
            let b = hi.map(fix).unwrap_or(n);
            (a as usize, (b.max(a)) as usize)
        };
        match v {
            Value::Str(s) => {
                let chars: Vec<char> = s.chars().collect();
                let (a, b) = bounds(chars.len());
                Ok(Value::Str(chars[a..b].iter().collect()))
            }
            Value::List(items) => {
                let (a, b) = bounds(items.len());
                Ok(Value::List(items[a..b].to_vec()))
            }
            other => self.fail(RunError::TypeMismatch(format!("cannot slice {}", other.type_name()))),
        }
    }

    fn eval_args(&mut self, args: &[Arg]) -> Exec<(Vec<Value>, Kwargs)> {
        let mut pos = Vec::new();
        let mut kw: Vec<(String, Value)> = Vec::new();
        for a in args {
            match a {
                Arg::Pos(e) => pos.push(self.eval(e)?),
                Arg::Kw(k, e) => {
                    let v = self.eval(e)?;
                    if kw.iter().any(|(n, _)| n == k) {
                        return self.fail(RunError::BadCall(format!("repeated keyword argument {k}")));
                    }
                    kw.push((k.clone(), v));
                }
                Arg::Star2(e) => match self.eval(e)? {
                    Value::Dict(items) => {
                        for (k, v) in items {
                            let Value::Str(k) = k else {
                                return self.fail(RunError::TypeMismatch("keywords must be strings".into()));
                            };
                            if kw.iter().any(|(n, _)| *n == k) {
                                return self.fail(RunError::BadCall(format!("repeated keyword argument {k}")));
                            }
                            kw.push((k, v));
                        }
                    }
                    other => {
                        return self.fail(RunError::TypeMismatch(format!("** needs a dict, got {}", other.type_name())))
                    }
                },
            }
        }
        Ok((pos, kw))
    }

    fn call(&mut self, func: &Expr, args: &[Arg]) -> Exec<Value> {
        match func {
            Expr::Attr { value, name } if matches!(value.as_ref(), Expr::Name(n) if n == "env_op") => {
                let (pos, kw) = self.eval_args(args)?;
                self.env_op(name, pos, kw)
            }
            Expr::Attr { value, name } => {
                let recv = self.eval(value)?;
                let (pos, kw) = self.eval_args(args)?;
                self.method(recv, name, pos, kw)
            }
            Expr::Name(n) => {
                let (pos, kw) = self.eval_args(args)?;
                self.builtin(n, pos, kw)
            }
            _ => self.fail(RunError::TypeMismatch("expression is not callable".into())),
        }
    }

    /// Matches positional and keyword arguments against `names`; trailing
    /// names past `required` are optional.
    fn bind(
        &self,
        what: &str,
        names: &[&str],
        required: usize,
        pos: Vec<Value>,
        kw: Vec<(String, Value)>,
    ) -> Exec<Vec<Option<Value>>> {
        if pos.len() > names.len() {
            return self.fail(RunError::BadCall(format!(
                "{what} takes at most {} arguments ({} given)",
                names.len(),
                pos.len()
            )));
        }
        let mut slots: Vec<Option<Value>> = vec![None; names.len()];
        for (i, v) in pos.into_iter().enumerate() {
            slots[i] = Some(v);
        }
        for (k, v) in kw {
            match names.iter().position(|n| *n == k) {
                Some(i) if slots[i].is_none() => slots[i] = Some(v),
                Some(_) => return self.fail(RunError::BadCall(format!("{what} got multiple values for {k}"))),
                None => return self.fail(RunError::BadCall(format!("{what} got an unexpected keyword argument {k}"))),
            }
        }
        for (i, n) in names.iter().enumerate().take(required) {
            if slots[i].is_none() {
                return self.fail(RunError::BadCall(format!("{what} missing argument {n}")));
            }
        }
        Ok(slots)
    }

    fn want_int(&self, what: &str, v: Option<Value>) -> Exec<i64> {
        match v {
            Some(Value::Int(i)) => Ok(i),
            Some(other) => self.fail(RunError::TypeMismatch(format!("{what} expects an int, got {}", other.type_name()))),
            None => self.fail(RunError::BadCall(format!("{what} missing argument"))),
        }
    }

    fn want_str(&self, what: &str, v: Option<Value>) -> Exec<String> {
        match v {
            Some(Value::Str(s)) => Ok(s),
            Some(other) => self.fail(RunError::TypeMismatch(format!("{what} expects a str, got {}", other.type_name()))),
            None => self.fail(RunError::BadCall(format!("{what} missing argument"))),
        }
    }

    fn step(&mut self, action: HardAction) -> Exec<Value> {
        let before = self.env.observe().clone();
        let call = action.to_string();
        let after = match self.env.step(&action) {
            Ok(o) => o,
            Err(err) => return self.fail(RunError::Env { call, err }),
        };
        let rho = format!("executed {call}; screen_id {}\u{2192}{}", before.screen_id, after.screen_id);
        let stop = matches!(action.kind, crate::env::ActionKind::Stop);
        self.steps.push(ExecStep {
            line: self.line,
            source: self.source.clone(),
            action,
            obs_before: before,
            obs_after: after,
            rho,
        });
        if stop {
            return Err(Halt::Stopped);
        }
        Ok(Value::None)
    }

    fn env_op(&mut self, method: &str, pos: Vec<Value>, kw: Vec<(String, Value)>) -> Exec<Value> {
        let what = format!("env_op.{method}");
        match method {
            "open_app" => {
                let a = self.bind(&what, &["app_name"], 1, pos, kw)?;
                let name = self.want_str(&what, a.into_iter().next().flatten())?;
                self.step(HardAction::open_app(name))
            }
            "click" | "click_xpath" | "long_press" => {
                let a = self.bind(&what, &["index"], 1, pos, kw)?;
                let i = self.want_int(&what, a.into_iter().next().flatten())?;
                let action = if method == "long_press" { HardAction::long_press(i) } else { HardAction::click(i) };
                self.step(action)
            }
            "input_text" => {
                // Both (index, text) and (text, index[, clear]) orders are accepted.
                let text_first = matches!(pos.first(), Some(Value::Str(_)));
                let names: &[&str] =
                    if text_first { &["text", "index", "clear"] } else { &["index", "text", "clear"] };
                let a = self.bind(&what, names, 2, pos, kw)?;
                let mut a = a.into_iter();
                let (first, second) = (a.next().flatten(), a.next().flatten());
                let (index, text) = if text_first { (second, first) } else { (first, second) };
                let i = self.want_int(&what, index)?;
                let t = self.want_str(&what, text)?;
                self.step(HardAction::input_text(i, t))
            }
            "swipe" => {
                let a = self.bind(&what, &["direction"], 1, pos, kw)?;
                let d = self.want_str(&what, a.into_iter().next().flatten())?;
                match Direction::parse(&d) {
                    Some(d) => self.step(HardAction::swipe(d)),
                    None => self.fail(RunError::Value(format!("unknown swipe direction {d:?}"))),
                }
            }
            "wait" => {
                self.bind(&what, &[], 0, pos, kw)?;
                self.step(HardAction::wait())
            }
            "go_back" => {
                self.bind(&what, &[], 0, pos, kw)?;
                self.step(HardAction::go_back())
            }
            "stop" => {
                let a = self.bind(&what, &["status"], 0, pos, kw)?;
                let s = match a.into_iter().next().flatten() {
                    None => "complete".to_string(),
                    v => self.want_str(&what, v)?,
                };
                match StopStatus::parse(&s) {
                    Some(st) => self.step(HardAction::stop(st)),
                    None => self.fail(RunError::Value(format!("unknown stop status {s:?}"))),
                }
            }
            "answer" => {
                let a = self.bind(&what, &["text"], 1, pos, kw)?;
                let t = match a.into_iter().next().flatten() {
                    Some(Value::Str(s)) => s,
                    Some(v) => v.to_string(),
                    None => String::new(),
                };
                self.step(HardAction::answer(t))
            }
            "find_element" => {
                if !pos.is_empty() {
                    return self.fail(RunError::BadCall("env_op.find_element takes keyword arguments only".into()));
                }
                let map: serde_json::Map<String, serde_json::Value> =
                    kw.into_iter().map(|(k, v)| (k, v.to_json())).collect();
                let spec = match MatchSpec::from_map(&map) {
                    Ok(s) => s,
                    Err(e) => return self.fail(RunError::Match(e)),
                };
                let obs = self.env.observe().clone();
                match matcher::find_element(&spec, &obs, &mut *self.svc.grounder, &self.svc.matcher) {
                    Ok(i) => Ok(Value::Int(i)),
                    Err(e) => self.fail(RunError::Match(e)),
                }
            }
            "get_cur_ui_element_list" => {
                self.bind(&what, &[], 0, pos, kw)?;
                let items = self.env.observe().elements.iter().map(|e| Value::from_json(&e.to_json())).collect();
                Ok(Value::List(items))
            }
            "ask_mllm" => {
                let a = self.bind(&what, &["question", "output_format"], 1, pos, kw)?;
                let mut a = a.into_iter();
                let q = self.want_str(&what, a.next().flatten())?;
                let f = match a.next().flatten() {
                    None => String::new(),
                    v => self.want_str(&what, v)?,
                };
                let obs = self.env.observe().clone();
                match self.svc.mllm.ask(&q, &f, &obs) {
                    Ok(answer) => Ok(Value::Str(answer)),
                    Err(e) => self.fail(RunError::Mllm(e)),
                }
            }
            other => self.fail(RunError::BadCall(format!("unknown env_op method {other}"))),
        }
    }

    fn builtin(&mut self, name: &str, pos: Vec<Value>, kw: Vec<(String, Value)>) -> Exec<Value> {
        if name == "print" {
            let line: Vec<String> = pos.iter().map(|v| v.to_string()).collect();
            self.log.push(line.join(" "));
            return Ok(Value::None);
        }
        if !kw.is_empty() {
            return self.fail(RunError::BadCall(format!("{name}() takes no keyword arguments")));
        }
        let one = |s: &Self, pos: &[Value]| -> Exec<Value> {
            if pos.len() != 1 {
                return s.fail(RunError::BadCall(format!("{name}() takes exactly one argument")));
            }
            Ok(pos[0].clone())
        };
        match name {
            "str" => Ok(Value::Str(one(self, &pos)?.to_string())),
            "bool" => Ok(Value::Bool(one(self, &pos)?.truthy())),
            "int" => match one(self, &pos)? {
                Value::Int(i) => Ok(Value::Int(i)),
                Value::Bool(b) => Ok(Value::Int(b as i64)),
                Value::Str(s) => match s.trim().parse::<i64>() {
                    Ok(i) => Ok(Value::Int(i)),
                    Err(_) => self.fail(RunError::Value(format!("invalid literal for int(): {}", Value::Str(s).repr()))),
                },
                other => self.fail(RunError::TypeMismatch(format!("int() of {}", other.type_name()))),
            },
            "len" => match one(self, &pos)? {
                Value::Str(s) => Ok(Value::Int(s.chars().count() as i64)),
                Value::List(l) => Ok(Value::Int(l.len() as i64)),
                Value::Dict(d) => Ok(Value::Int(d.len() as i64)),
                other => self.fail(RunError::TypeMismatch(format!("len() of {}", other.type_name()))),
            },
            "abs" => match one(self, &pos)? {
                Value::Int(i) => Ok(Value::Int(i.checked_abs().ok_or(()).or_else(|_| self.fail(overflow()))?)),
                other => self.fail(RunError::TypeMismatch(format!("abs() of {}", other.type_name()))),
            },
            "range" => {
                let ints: Vec<i64> = pos
                    .iter()
                    .map(|v| match v {
                        Value::Int(i) => Some(*i),
                        _ => None,
                    })
                    .collect::<Option<_>>()
                    .map_or_else(|| self.fail(RunError::TypeMismatch("range() expects ints".into())), Ok)?;
                let (start, stop, step) = match ints.as_slice() {
                    [n] => (0, *n, 1),
                    [a, b] => (*a, *b, 1),
                    [a, b, s] => (*a, *b, *s),
                    _ => return self.fail(RunError::BadCall("range() takes 1 to 3 arguments".into())),
                };
                if step == 0 {
                    return self.fail(RunError::Value("range() step must not be zero".into()));
                }
                let len = if step > 0 { (stop - start + step - 1) / step } else { (start - stop - step - 1) / -step };
                if len > MAX_SEQUENCE {
                    return self.fail(RunError::Value("range() too large".into()));
                }
                Ok(Value::List((0..len.max(0)).map(|k| Value::Int(start + k * step)).collect()))
            }
            "min" | "max" => {
                let items = if pos.len() == 1 {
                    match &pos[0] {
                        Value::List(l) => l.clone(),
                        other => vec![other.clone()],
                    }
                } else {
                    pos
                };
                let mut best: Option<Value> = None;
                for v in items {
                    best = Some(match best {
                        None => v,
                        Some(b) => {
                            let less = self.compare(CmpOp::Lt, &v, &b)?;
                            if (name == "min") == less && v != b {
                                v
                            } else {
                                b
                            }
                        }
                    });
                }
                match best {
                    Some(b) => Ok(b),
                    None => self.fail(RunError::Value(format!("{name}() of empty sequence"))),
                }
            }
            other => self.fail(RunError::NameError(other.to_string())),
        }
    }

    fn method(&mut self, recv: Value, name: &str, pos: Vec<Value>, kw: Vec<(String, Value)>) -> Exec<Value> {
        let what = format!("{}.{name}", recv.type_name());
        match recv {
            Value::Str(s) => self.str_method(&what, s, name, pos, kw),
            Value::Dict(items) => match name {
                "get" => {
                    let a = self.bind(&what, &["key", "default"], 1, pos, kw)?;
                    let mut a = a.into_iter();
                    let key = a.next().flatten().unwrap_or(Value::None);
                    let default = a.next().flatten().unwrap_or(Value::None);
                    Ok(items.into_iter().find(|(k, _)| *k == key).map(|(_, v)| v).unwrap_or(default))
                }
                "keys" => Ok(Value::List(items.into_iter().map(|(k, _)| k).collect())),
                "values" => Ok(Value::List(items.into_iter().map(|(_, v)| v).collect())),
                _ => self.fail(RunError::TypeMismatch(format!("dict has no method {name}"))),
            },
            Value::List(items) => match name {
                "index" => {
                    let a = self.bind(&what, &["value"], 1, pos, kw)?;
                    let v = a.into_iter().next().flatten().unwrap_or(Value::None);
                    match items.iter().position(|i| *i == v) {
                        Some(p) => Ok(Value::Int(p as i64)),
                        None => self.fail(RunError::Value(format!("{} is not in list", v.repr()))),
                    }
                }
                "count" => {
                    let a = self.bind(&what, &["value"], 1, pos, kw)?;
                    let v = a.into_iter().next().flatten().unwrap_or(Value::None);
                    Ok(Value::Int(items.iter().filter(|i| **i == v).count() as i64))
                }
                _ => self.fail(RunError::TypeMismatch(format!("list has no method {name}"))),
            },
            other => self.fail(RunError::TypeMismatch(format!("{} has no method {name}", other.type_name()))),
        }
    }

    fn str_method(&mut self, what: &str, s: String, name: &str, pos: Vec<Value>, kw: Vec<(String, Value)>) -> Exec<Value> {
        let opt_str = |it: &Self, v: Option<Value>| -> Exec<Option<String>> {
            match v {
                None | Some(Value::None) => Ok(None),
                Some(Value::Str(x)) => Ok(Some(x)),
                Some(o) => it.fail(RunError::TypeMismatch(format!("{what} expects a str, got {}", o.type_name()))),
            }
        };
        match name {
            "endswith" | "startswith" => {
                let a = self.bind(what, &["suffix"], 1, pos, kw)?;
                let x = self.want_str(what, a.into_iter().next().flatten())?;
                Ok(Value::Bool(if name == "endswith" { s.ends_with(&x) } else { s.starts_with(&x) }))
            }
            "lower" | "upper" | "strip" | "lstrip" | "rstrip" | "isdigit" | "title" => {
                let a = self.bind(what, &["chars"], 0, pos, kw)?;
                let chars = opt_str(self, a.into_iter().next().flatten())?;
                let trim = |t: &str, left: bool, right: bool| -> String {
                    let pred = |c: char| match &chars {
                        Some(cs) => cs.contains(c),
                        None => c.is_whitespace(),
                    };
                    let mut r = t;
                    if left {
                        r = r.trim_start_matches(pred);
                    }
                    if right {
                        r = r.trim_end_matches(pred);
                    }
                    r.to_string()
                };
                Ok(match name {
                    "lower" => Value::Str(s.to_lowercase()),
                    "upper" => Value::Str(s.to_uppercase()),
                    "strip" => Value::Str(trim(&s, true, true)),
                    "lstrip" => Value::Str(trim(&s, true, false)),
                    "rstrip" => Value::Str(trim(&s, false, true)),
                    "title" => Value::Str(
                        s.split(' ')
                            .map(|w| {
                                let mut c = w.chars();
                                match c.next() {
                                    Some(f) => f.to_uppercase().collect::<String>() + &c.as_str().to_lowercase(),
                                    None => String::new(),
                                }
                            })
                            .collect::<Vec<_>>()
                            .join(" "),
                    ),
                    _ => Value::Bool(!s.is_empty() && s.chars().all(|c| c.is_ascii_digit())),
                })
            }
            "split" | "rsplit" => {
                let a = self.bind(what, &["sep", "maxsplit"], 0, pos, kw)?;
                let mut a = a.into_iter();
                let sep = opt_str(self, a.next().flatten())?;
                let max = match a.next().flatten() {
                    None => -1,
                    Some(Value::Int(i)) => i,
                    Some(o) => {
                        return self.fail(RunError::TypeMismatch(format!("maxsplit expects an int, got {}", o.type_name())))
                    }
                };
                if sep.as_deref() == Some("") {
                    return self.fail(RunError::Value("empty separator".into()));
                }
                let parts = split(&s, sep.as_deref(), max, name == "rsplit");
                Ok(Value::List(parts.into_iter().map(Value::Str).collect()))
            }
            "replace" => {
                let a = self.bind(what, &["old", "new"], 2, pos, kw)?;
                let mut a = a.into_iter();
                let old = self.want_str(what, a.next().flatten())?;
                let new = self.want_str(what, a.next().flatten())?;
                if old.is_empty() {
                    return self.fail(RunError::Value("empty pattern in replace".into()));
                }
                Ok(Value::Str(s.replace(&old, &new)))
            }
            "find" => {
                let a = self.bind(what, &["sub"], 1, pos, kw)?;
                let sub = self.want_str(what, a.into_iter().next().flatten())?;
                Ok(Value::Int(s.find(&sub).map(|b| s[..b].chars().count() as i64).unwrap_or(-1)))
            }
            "join" => {
                let a = self.bind(what, &["iterable"], 1, pos, kw)?;
                match a.into_iter().next().flatten() {
                    Some(Value::List(items)) => {
                        let mut parts = Vec::new();
                        for i in items {
                            match i {
                                Value::Str(x) => parts.push(x),
                                o => {
                                    return self
                                        .fail(RunError::TypeMismatch(format!("join expects strs, got {}", o.type_name())))
                                }
                            }
                        }
                        Ok(Value::Str(parts.join(&s)))
                    }
                    _ => self.fail(RunError::TypeMismatch("join expects a list".into())),
                }
            }
            _ => self.fail(RunError::TypeMismatch(format!("str has no method {name}"))),
        }
    }
}

fn overflow() -> RunError {
    RunError::Value("integer overflow".into())
}

/// Python `str.split` / `str.rsplit` semantics.
fn split(s: &str, sep: Option<&str>, max: i64, from_right: bool) -> Vec<String> {
    let limit = if max < 0 { usize::MAX } else { max as usize };
    match sep {
        Some(sep) => {
            if from_right {
                let mut parts: Vec<String> = s.rsplitn(limit.saturating_add(1), sep).map(str::to_string).collect();
                parts.reverse();
                parts
            } else {
                s.splitn(limit.saturating_add(1), sep).map(str::to_string).collect()
            }
        }
        None => {
            let words: Vec<&str> = s.split_whitespace().collect();
            if words.len() <= limit.saturating_add(1) || limit == usize::MAX {
                return words.into_iter().map(str::to_string).collect();
            }
            if from_right {
                // keep the leading remainder intact
                let mut out: Vec<String> = Vec::new();
                let mut rest = s.trim_end();
                for _ in 0..limit {
                    let cut = rest.rfind(char::is_whitespace).expect("enough words");
                    out.push(rest[cut..].trim().to_string());
                    rest = rest[..cut].trim_end();
                }
                out.push(rest.trim_start().to_string());
                out.reverse();
                out
            } else {
                let mut out = Vec::new();
                let mut rest = s.trim_start();
                for _ in 0..limit {
                    let cut = rest.find(char::is_whitespace).expect("enough words");
                    out.push(rest[..cut].to_string());
                    rest = rest[cut..].trim_start();
                }
                out.push(rest.trim_end().to_string());
                out
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::split;

    #[test]
    fn split_matches_python() {
        assert_eq!(split("a.b.c", Some("."), 1, true), vec!["a.b", "c"]);
        assert_eq!(split("a.b.c", Some("."), 1, false), vec!["a", "b.c"]);
        assert_eq!(split("a.b.c", Some("."), -1, true), vec!["a", "b", "c"]);
        assert_eq!(split("  a  b c ", None, -1, false), vec!["a", "b", "c"]);
        assert_eq!(split("a b c", None, 1, false), vec!["a", "b c"]);
        assert_eq!(split("a b c", None, 1, true), vec!["a b", "c"]);
        assert_eq!(split("noext", Some("."), 1, true), vec!["noext"]);
    }
}
