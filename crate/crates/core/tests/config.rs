mod common;

use std::path::{Path, PathBuf};

use autorpa_core::bundled;
use autorpa_core::config::{BackendKind, Config, ConfigError};
use autorpa_core::llm::RemoteConfig;
use autorpa_core::pipeline::{test_task_type, Mode, Sessions};
use common::{build_all, fixtures_root};
use proptest::prelude::*;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn config() -> impl Strategy<Value = Config> {
    let base = Config::from_toml(
        "[paths]\nfixtures = \"f\"\nbank = \"b\"\noutput = \"o\"\n[backend]\nkind = \"simulated\"\n",
        "base",
    )
    .unwrap();
    (
        prop::sample::select(BackendKind::ALL.to_vec()),
        1usize..6,
        0u32..4,
        0u32..5,
        prop::collection::vec(0u64..100, 1..4),
        (any::<bool>(), any::<bool>(), any::<bool>()),
        prop::option::of(0.0f64..1.0),
        prop::sample::select(vec!["default", "broken-builder", "failing-react"]),
        prop::option::of("[a-z]{1,8}"),
    )
        .prop_map(move |(kind, n, n_ref, m, seeds, (code_only, unified, ci), ratio, profile, tasks)| {
            let mut c = base.clone();
            c.backend.kind = kind;
            c.backend.profile = profile.to_string();
            c.backend.remote = Some(RemoteConfig {
                endpoint: "https://models.example/v1".into(),
                model: "m".into(),
                api_key_env: "KEY".into(),
                timeout_ms: 1000,
                max_retries: 1,
            });
            c.paths.tasks = tasks.map(PathBuf::from);
            c.pipeline.n = n;
            c.pipeline.n_ref = n_ref;
            c.pipeline.m = m;
            c.modes.code_only = code_only;
            c.modes.unified_translator = unified;
            c.modes.case_insensitive = ci;
            c.test.seeds = seeds;
            c.test.max_token_ratio = ratio;
            c
        })
}

proptest! {
    #[test]
    fn toml_round_trip(c in config()) {
        let text = c.to_toml();
        let back = Config::from_toml(&text, "rt").unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.to_toml(), text);
    }
}

#[test]
fn bundled_config_points_at_the_fixtures() {
    let c = Config::load(&configs_dir().join("bundled.toml")).unwrap();
    assert_eq!(c.backend.kind, BackendKind::ScriptedExact);
    assert_eq!(c.test.seeds, [0]);
    assert_eq!(c.fixtures_dir().canonicalize().unwrap(), fixtures_root().join("bundled").canonicalize().unwrap());
    let tasks = c.task_set().unwrap();
    let types = c.selected_types(&tasks).unwrap();
    assert_eq!(types.len(), 5);
    c.check_fixtures(&types, &["build".into(), "test-autorpa".into(), "test-code_only".into(), "test-react".into()]).unwrap();
}

#[test]
fn missing_fixture_names_the_path() {
    let mut c = Config::load(&configs_dir().join("bundled.toml")).unwrap();
    c.paths.fixtures = PathBuf::from("/nowhere");
    let err = c.check_fixtures(&["form-fill".into()], &["build".into()]).unwrap_err();
    assert!(matches!(&err, ConfigError::MissingFixture(p) if p == "/nowhere/form-fill/build.jsonl"), "{err}");
    c.backend.kind = BackendKind::Simulated;
    c.check_fixtures(&["form-fill".into()], &["build".into()]).unwrap();
}

#[test]
fn unknown_task_type_is_rejected() {
    let mut c = Config::load(&configs_dir().join("bundled.toml")).unwrap();
    c.test.task_types = vec!["no-such-type".into()];
    assert!(c.selected_types(&bundled::task_set()).is_err());
}

#[test]
fn rerecording_reproduces_the_fixtures() {
    let out = tempfile::tempdir().unwrap();
    let mut c = Config::load(&configs_dir().join("bundled.toml")).unwrap();
    c.backend.kind = BackendKind::Record;
    c.backend.record_from = BackendKind::Simulated;
    c.paths.fixtures = out.path().join("fx");
    let tasks = c.task_set().unwrap();
    let sessions = c.sessions(&tasks);
    let pcfg = c.pipeline();
    let t = bundled::NOTE_CREATE;
    let builds = build_all(&tasks, &[t], &sessions as &dyn Sessions, &out.path().join("bank"), &pcfg);
    test_task_type(&tasks, &builds[0], &[0], Mode::CodeOnly, &pcfg, &sessions).unwrap();
    for s in ["build", "test-code_only", "test-react"] {
        let fresh = std::fs::read(c.fixture_path(t, s)).unwrap();
        let pinned = std::fs::read(fixtures_root().join("bundled").join(t).join(format!("{s}.jsonl"))).unwrap();
        assert!(fresh == pinned, "{s} differs from the recorded fixture");
    }
}
