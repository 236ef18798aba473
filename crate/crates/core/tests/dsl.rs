use std::collections::BTreeMap;

use autorpa_core::bundled::{self, NOTE_CREATE};
use autorpa_core::dsl::ast::*;
use autorpa_core::dsl::interp::{self, Services};
use autorpa_core::dsl::{parse, print_program, static_check, NoMllm, Outcome, ParseError, RunError, Value};
use autorpa_core::env::{ActionKind, GuiEnv};
use autorpa_core::matcher::NoGrounder;
use proptest::prelude::*;

fn note_env(seed: u64) -> GuiEnv {
    GuiEnv::instantiate(&bundled::task_set(), NOTE_CREATE, seed).unwrap()
}

fn args(env: &GuiEnv, keys: &[&str]) -> BTreeMap<String, Value> {
    let b = &env.instance().bindings;
    let mut out = BTreeMap::new();
    for k in keys {
        let (param, var) = match *k {
            "file_extension" => ("file_extension", "ext"),
            other => (other, other),
        };
        out.insert(param.to_string(), Value::from(b[var].as_str()));
    }
    out
}

fn run_src(src: &str, env: &mut GuiEnv, a: &BTreeMap<String, Value>) -> Result<interp::ExecTrace, RunError> {
    let p = parse(src).unwrap();
    let mut g = NoGrounder;
    let mut m = NoMllm;
    let mut svc = Services::new(&mut g, &mut m);
    interp::run(&p, a, env, &mut svc)
}

#[test]
fn listings_parse_and_pass_lint() {
    for src in [bundled::NOTE_INITIAL_RPA, bundled::NOTE_REFINED_RPA, bundled::PASSWORD_SNIPPET] {
        let p = parse(src).unwrap();
        assert_eq!(static_check(&p), vec![], "{src}");
        assert_eq!(parse(&print_program(&p)).unwrap(), p);
    }
    let refined = parse(bundled::NOTE_REFINED_RPA).unwrap();
    assert_eq!(refined.name.as_deref(), Some("create_markor_note"));
    assert_eq!(refined.param_names(), vec!["file_name", "file_extension", "text"]);
    assert_eq!(refined.doc.params[1].ty.as_deref(), Some("Optional[str]"));
    assert!(refined.doc.example_usage.contains("file_extension=\"txt\""));
}

#[test]
fn password_snippet_shape() {
    let p = parse(bundled::PASSWORD_SNIPPET).unwrap();
    assert!(p.name.is_none());
    let code: Vec<_> = p.body.iter().filter(|s| !matches!(s.kind, StmtKind::Comment(_))).collect();
    assert_eq!(code.len(), 3);
    assert_eq!(p.body.len(), 5);
}

#[test]
fn initial_program_handles_md_instance() {
    let mut env = note_env(1);
    assert_eq!(env.instance().bindings["ext"], "md");
    let a = args(&env, &["file_name", "text"]);
    let t = run_src(bundled::NOTE_INITIAL_RPA, &mut env, &a).unwrap();
    assert_eq!(t.outcome, Outcome::Completed);
    assert_eq!(env.reward().unwrap(), 1);
}

#[test]
fn initial_program_breaks_on_txt_instance() {
    let mut env = note_env(2);
    assert_eq!(env.instance().bindings["ext"], "txt");
    let a = args(&env, &["file_name", "text"]);
    let t = run_src(bundled::NOTE_INITIAL_RPA, &mut env, &a).unwrap();
    assert_eq!(t.outcome, Outcome::AssertFailed);
    let bp = t.breakpoint.unwrap();
    assert_eq!(bp.message, "Failed to find file name input field.");
    assert_eq!(bp.t_star, 2);
    assert_eq!(t.steps.len(), 2);
    assert_eq!(t.steps[0].action.kind, ActionKind::OpenApp);
    assert_eq!(t.steps[1].action.kind, ActionKind::Click);
    assert!(bp.observation.screen_id.starts_with("new_file_dialog"));
    assert!(!env.is_terminal());
}

#[test]
fn refined_program_handles_all_instances() {
    for seed in 0..4 {
        let mut env = note_env(seed);
        let a = args(&env, &["file_name", "file_extension", "text"]);
        let t = run_src(bundled::NOTE_REFINED_RPA, &mut env, &a).unwrap();
        assert_eq!(t.outcome, Outcome::Completed, "seed {seed}");
        assert_eq!(env.reward().unwrap(), 1, "seed {seed}");
        assert!(t.asserts_passed >= 5);
    }
}

#[test]
fn renamed_parameter_is_rejected_before_running() {
    let mut env = note_env(1);
    let mut a = args(&env, &["file_name", "text"]);
    a.insert("note_name".into(), Value::from("x"));
    assert_eq!(
        run_src(bundled::NOTE_REFINED_RPA, &mut env, &a).unwrap_err(),
        RunError::UnknownParam("note_name".into())
    );
    assert_eq!(env.steps_taken(), 0);
}

#[test]
fn retry_loop_swipes_then_fails_assert() {
    let src = "\
env_op.open_app('Markor')
retry = 0
idx = -1
while retry < 3:
    idx = env_op.find_element(text=\"Nowhere\", target_description=\"missing\")
    if idx != -1:
        break
    env_op.swipe(\"up\")
    retry += 1
assert idx != -1, \"gone\"
";
    let mut env = note_env(0);
    let t = run_src(src, &mut env, &BTreeMap::new()).unwrap();
    let swipes = t.steps.iter().filter(|s| s.action.kind == ActionKind::Swipe).count();
    assert_eq!(swipes, 3);
    assert_eq!(t.outcome, Outcome::AssertFailed);
    assert_eq!(t.breakpoint.unwrap().t_star, 4);
}

#[test]
fn runtime_errors_become_breakpoints() {
    let mut env = note_env(0);
    let t = run_src("env_op.open_app('Markor')\nx = 1 // 0\n", &mut env, &BTreeMap::new()).unwrap();
    assert_eq!(t.outcome, Outcome::RuntimeError);
    let bp = t.breakpoint.unwrap();
    assert_eq!((bp.t_star, bp.line), (1, 2));
    assert!(matches!(t.error, Some(RunError::Value(_))));

    let mut env = note_env(0);
    let t = run_src("env_op.click(99)\n", &mut env, &BTreeMap::new()).unwrap();
    assert!(matches!(t.error, Some(RunError::Env { .. })));
    assert_eq!(t.steps.len(), 0);
}

#[test]
fn fuel_bounds_infinite_loops() {
    let mut env = note_env(0);
    let p = parse("while True:\n    pass\n").unwrap();
    let (mut g, mut m) = (NoGrounder, NoMllm);
    let mut svc = Services::new(&mut g, &mut m);
    svc.fuel = 500;
    let t = interp::run(&p, &BTreeMap::new(), &mut env, &mut svc).unwrap();
    assert_eq!(t.error, Some(RunError::FuelExhausted(500)));
}

#[test]
fn python_semantics() {
    let src = "\
a = -7 // 2
b = -7 % 3
c = 'x.tar.gz'.rsplit('.', 1)[0]
d = None or 'dflt'
e = 0 and 5
f = 'abc'[-2:]
g = 1 < 2 < 3
h = [1, 2] + [3]
i = {'k': 1}.get('z', 4)
print(a, b, c, d, e, f, g, h, i, len(h), str(12) + 'x', int('42'))
";
    let mut env = note_env(0);
    let t = run_src(src, &mut env, &BTreeMap::new()).unwrap();
    assert_eq!(t.outcome, Outcome::Completed);
    assert_eq!(t.log, vec!["-4 2 x.tar dflt 0 bc True [1, 2, 3] 4 3 12x 42"]);
}

#[test]
fn unsupported_constructs() {
    let cases = [
        ("import os\n", "import"),
        ("from os import path\n", "import"),
        ("x = f'{y}'\n", "f-string"),
        ("x = 1.5\n", "float literal"),
        ("x = 3 / 2\n", "/ (true division)"),
        ("x = [i for i in y]\n", "comprehension"),
        ("x = lambda: 1\n", "lambda"),
        ("a = b = 1\n", "chained assignment"),
        ("x = 1; y = 2\n", "semicolon"),
        ("x = (1, 2)\n", "tuple"),
        ("class A:\n    pass\n", "class"),
        ("try:\n    pass\nexcept:\n    pass\n", "try"),
        ("with a:\n    pass\n", "with"),
        ("x[0] = 1\n", "assignment to subscript or attribute"),
    ];
    for (src, want) in cases {
        match parse(src) {
            Err(ParseError::Unsupported { construct, .. }) => assert_eq!(construct, want, "{src}"),
            other => panic!("{src}: {other:?}"),
        }
    }
}

#[test]
fn syntax_errors_carry_position() {
    match parse("x = (1\n") {
        Err(ParseError::Syntax { line, .. }) => assert!(line >= 1),
        other => panic!("{other:?}"),
    }
    assert!(matches!(parse("if x:\ny = 1\n"), Err(ParseError::Syntax { line: 2, .. })));
}

#[test]
fn empty_and_comment_only_bodies() {
    let p = parse("def f():\n    # nothing yet\n    pass\n").unwrap();
    assert_eq!(p.body.len(), 1);
    let printed = print_program(&p);
    assert!(printed.contains("    pass\n"), "{printed}");
    assert_eq!(parse(&printed).unwrap(), p);
    assert_eq!(parse("").unwrap().body, vec![]);
}

#[test]
fn lint_findings() {
    let src = "\
def f(a):
    while a > 0:
        env_op.wait()
    env_op.teleport(1)
    assert a
    env_op.stop()
    env_op.wait()
    print(missing)
";
    let msgs: Vec<String> = static_check(&parse(src).unwrap()).into_iter().map(|d| d.message).collect();
    assert_eq!(
        msgs,
        vec![
            "unbounded loop",
            "unknown env_op method teleport",
            "assert without message",
            "dead code after stop",
            "undefined name missing"
        ]
    );
}

#[test]
fn input_text_accepts_both_orders() {
    for src in ["env_op.input_text(0, 'hi')", "env_op.input_text('hi', 0, True)", "env_op.input_text(text='hi', index=0)"] {
        let mut env = GuiEnv::instantiate(&bundled::task_set(), bundled::FORM_FILL, 0).unwrap();
        let idx = env.observe().elements.iter().find(|e| e.accepts_text()).unwrap().index;
        let src = src.replace('0', &idx.to_string());
        let t = run_src(&src, &mut env, &BTreeMap::new()).unwrap();
        assert_eq!(t.outcome, Outcome::Completed, "{src}: {:?}", t.error);
        assert_eq!(t.steps[0].action.text_arg.as_deref(), Some("hi"));
        assert_eq!(t.steps[0].action.index, Some(idx as i64));
    }
}

// ---- round trip ----

const NAMES: [&str; 6] = ["a", "b", "x1", "name_index", "env_op", "file_name"];
const ATTRS: [&str; 4] = ["get", "startswith", "click", "rsplit"];

fn name() -> impl Strategy<Value = String> {
    proptest::sample::select(&NAMES[..]).prop_map(str::to_string)
}

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (-1000i64..1000).prop_map(Expr::Int),
        "[a-z \"'\\\\\n\t\u{e9}]{0,6}".prop_map(Expr::Str),
        any::<bool>().prop_map(Expr::Bool),
        Just(Expr::None),
        name().prop_map(Expr::Name),
    ]
}

fn expr() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(4, 32, 4, |inner| {
        let binop = prop_oneof![
            Just(BinOp::Add),
            Just(BinOp::Sub),
            Just(BinOp::Mul),
            Just(BinOp::FloorDiv),
            Just(BinOp::Mod)
        ];
        let cmp = prop_oneof![
            Just(CmpOp::Eq),
            Just(CmpOp::Ne),
            Just(CmpOp::Lt),
            Just(CmpOp::Ge),
            Just(CmpOp::In),
            Just(CmpOp::NotIn),
            Just(CmpOp::Is),
            Just(CmpOp::IsNot)
        ];
        let arg = prop_oneof![
            inner.clone().prop_map(Arg::Pos),
            (name(), inner.clone()).prop_map(|(k, v)| Arg::Kw(k, v)),
            inner.clone().prop_map(Arg::Star2),
        ];
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..3).prop_map(Expr::List),
            prop::collection::vec((inner.clone(), inner.clone()), 0..3).prop_map(Expr::Dict),
            (inner.clone(), proptest::sample::select(&ATTRS[..]))
                .prop_map(|(v, n)| Expr::Attr { value: Box::new(v), name: n.to_string() }),
            (inner.clone(), prop::collection::vec(arg, 0..3)).prop_map(|(f, mut args)| {
                // positional arguments must come first
                args.sort_by_key(|a| !matches!(a, Arg::Pos(_)));
                Expr::Call { func: Box::new(f), args }
            }),
            (inner.clone(), inner.clone())
                .prop_map(|(v, i)| Expr::Subscript { value: Box::new(v), index: Box::new(Index::Item(i)) }),
            (inner.clone(), prop::option::of(inner.clone()), prop::option::of(inner.clone()))
                .prop_map(|(v, lo, hi)| Expr::Subscript { value: Box::new(v), index: Box::new(Index::Slice(lo, hi)) }),
            inner.clone().prop_map(|e| Expr::Unary { op: UnaryOp::Not, operand: Box::new(e) }),
            inner.clone().prop_filter("negated literal folds", |e| !matches!(e, Expr::Int(n) if *n >= 0)).prop_map(
                |e| Expr::Unary { op: UnaryOp::Neg, operand: Box::new(e) }
            ),
            (binop, inner.clone(), inner.clone())
                .prop_map(|(op, l, r)| Expr::Binary { op, left: Box::new(l), right: Box::new(r) }),
            (inner.clone(), prop::collection::vec((cmp, inner.clone()), 1..3))
                .prop_map(|(l, ops)| Expr::Compare { left: Box::new(l), ops }),
            (any::<bool>(), prop::collection::vec(inner.clone(), 2..4)).prop_map(|(or, values)| Expr::BoolOp {
                op: if or { BoolOp::Or } else { BoolOp::And },
                values
            }),
            (inner.clone(), inner.clone(), inner).prop_map(|(c, t, o)| Expr::IfExp {
                cond: Box::new(c),
                then: Box::new(t),
                otherwise: Box::new(o)
            }),
        ]
    })
}

fn simple_stmt() -> impl Strategy<Value = StmtKind> {
    let aug = prop_oneof![Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul), Just(BinOp::FloorDiv), Just(BinOp::Mod)];
    prop_oneof![
        (name(), expr()).prop_map(|(target, value)| StmtKind::Assign { target, value }),
        (name(), aug, expr()).prop_map(|(target, op, value)| StmtKind::AugAssign { target, op, value }),
        (expr(), prop::option::of(expr())).prop_map(|(cond, msg)| StmtKind::Assert { cond, msg }),
        expr().prop_map(StmtKind::Expr),
        Just(StmtKind::Break),
        Just(StmtKind::Continue),
        prop::option::of(expr()).prop_map(StmtKind::Return),
    ]
}

fn block(inner: impl Strategy<Value = Stmt> + Clone) -> impl Strategy<Value = Vec<Stmt>> {
    // comments only ever lead a block so that they stay attached to it
    (prop::option::of("[ a-z]{0,8}"), prop::collection::vec(inner, 0..3)).prop_map(|(c, mut body)| {
        if let Some(c) = c {
            body.insert(0, Stmt::new(StmtKind::Comment(c.trim_end().to_string())));
        }
        body
    })
}

fn stmt() -> impl Strategy<Value = Stmt> + Clone {
    simple_stmt().prop_map(Stmt::new).prop_recursive(3, 24, 3, |inner| {
        prop_oneof![
            (prop::collection::vec((expr(), block(inner.clone())), 1..3), prop::option::of(block(inner.clone())))
                .prop_map(|(branches, orelse)| Stmt::new(StmtKind::If { branches, orelse })),
            (expr(), block(inner.clone())).prop_map(|(cond, body)| Stmt::new(StmtKind::While { cond, body })),
            (name(), expr(), block(inner))
                .prop_map(|(var, iter, body)| Stmt::new(StmtKind::For { var, iter, body })),
        ]
    })
}

fn program() -> impl Strategy<Value = Program> {
    let param = (name(), prop::option::of(Just("Optional[str]".to_string())), prop::option::of(leaf()))
        .prop_map(|(name, annotation, default)| Param { name, annotation, default });
    (
        any::<bool>(),
        prop::collection::vec(param, 0..3),
        block(stmt()),
        "[a-z][a-z ]{0,20}[a-z]",
    )
        .prop_map(|(is_fn, mut params, body, desc)| {
            params.sort_by(|a, b| a.name.cmp(&b.name));
            params.dedup_by(|a, b| a.name == b.name);
            // defaults must trail
            params.sort_by_key(|p| p.default.is_some());
            if is_fn {
                let doc_params = params
                    .iter()
                    .map(|p| ParamDoc { name: p.name.clone(), ty: p.annotation.clone(), doc: "some value".into() })
                    .collect();
                Program {
                    name: Some("skill".into()),
                    params,
                    returns: None,
                    doc: ProgramDoc { description: desc, params: doc_params, example_usage: "skill()".into() },
                    body,
                }
            } else {
                Program { body, ..Program::default() }
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn print_then_parse_is_identity(p in program()) {
        let printed = print_program(&p);
        let back = parse(&printed).map_err(|e| TestCaseError::fail(format!("{e}\n{printed}")))?;
        prop_assert_eq!(&back, &p, "{}", printed);
        prop_assert_eq!(print_program(&back), printed);
    }

    #[test]
    fn expressions_round_trip(e in expr()) {
        let src = autorpa_core::dsl::print_expr(&e);
        prop_assert_eq!(autorpa_core::dsl::parse_expr(&src).unwrap(), e);
    }
}
