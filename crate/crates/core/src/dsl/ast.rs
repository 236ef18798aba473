//! Syntax tree for the soft-coded action language.

/// A parsed source unit: either a single function with its documentation
/// header, or a bare statement snippet (`name` is `None`).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Program {
    pub name: Option<String>,
    pub params: Vec<Param>,
    pub returns: Option<String>,
    pub doc: ProgramDoc,
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub name: String,
    /// Type annotation as written, e.g. `Optional[str]`.
    pub annotation: Option<String>,
    pub default: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProgramDoc {
    pub description: String,
    pub params: Vec<ParamDoc>,
    pub example_usage: String,
}

impl ProgramDoc {
    pub fn is_empty(&self) -> bool {
        self.description.is_empty() && self.params.is_empty() && self.example_usage.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamDoc {
    pub name: String,
    pub ty: Option<String>,
    pub doc: String,
}

impl Program {
    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }
}

/// A statement with its 1-based source line. Equality ignores the line.
#[derive(Debug, Clone, Eq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub line: u32,
}

impl PartialEq for Stmt {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl Stmt {
    pub fn new(kind: StmtKind) -> Self {
        Stmt { kind, line: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StmtKind {
    Assign { target: String, value: Expr },
    AugAssign { target: String, op: BinOp, value: Expr },
    If { branches: Vec<(Expr, Vec<Stmt>)>, orelse: Option<Vec<Stmt>> },
    While { cond: Expr, body: Vec<Stmt> },
    For { var: String, iter: Expr, body: Vec<Stmt> },
    Assert { cond: Expr, msg: Option<Expr> },
    Expr(Expr),
    Break,
    Continue,
    Return(Option<Expr>),
    /// Own-line comment; text excludes the leading `#`.
    Comment(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Int(i64),
    Str(String),
    Bool(bool),
    None,
    Name(String),
    List(Vec<Expr>),
    Dict(Vec<(Expr, Expr)>),
    Attr { value: Box<Expr>, name: String },
    Call { func: Box<Expr>, args: Vec<Arg> },
    Subscript { value: Box<Expr>, index: Box<Index> },
    Unary { op: UnaryOp, operand: Box<Expr> },
    Binary { op: BinOp, left: Box<Expr>, right: Box<Expr> },
    Compare { left: Box<Expr>, ops: Vec<(CmpOp, Expr)> },
    BoolOp { op: BoolOp, values: Vec<Expr> },
    IfExp { cond: Box<Expr>, then: Box<Expr>, otherwise: Box<Expr> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Index {
    Item(Expr),
    Slice(Option<Expr>, Option<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Arg {
    Pos(Expr),
    Kw(String, Expr),
    Star2(Expr),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Not,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    FloorDiv,
    Mod,
}

impl BinOp {
    pub fn as_str(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::FloorDiv => "//",
            BinOp::Mod => "%",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    In,
    NotIn,
    Is,
    IsNot,
}

impl CmpOp {
    pub fn as_str(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::In => "in",
            CmpOp::NotIn => "not in",
            CmpOp::Is => "is",
            CmpOp::IsNot => "is not",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoolOp {
    And,
    Or,
}

impl Expr {
    pub fn name(n: impl Into<String>) -> Self {
        Expr::Name(n.into())
    }

    pub fn str(s: impl Into<String>) -> Self {
        Expr::Str(s.into())
    }

    /// `env_op.<method>` when this is an env_op call.
    pub fn env_op_method(&self) -> Option<&str> {
        if let Expr::Call { func, .. } = self {
            if let Expr::Attr { value, name } = func.as_ref() {
                if matches!(value.as_ref(), Expr::Name(n) if n == "env_op") {
                    return Some(name);
                }
            }
        }
        None
    }
}
