mod common;

use std::collections::BTreeSet;

use autorpa_core::bank::Bank;
use autorpa_core::bundled::{self, NOTE_CREATE};
use autorpa_core::dsl::Outcome;
use autorpa_core::llm::{AgentTag, Gateway, LlmError};
use autorpa_core::pipeline::{
    build_task_type, evaluate, replay, BuildStatus, Mode, PipelineConfig, RowPath, TestReport,
};
use autorpa_core::sim;
use common::{build_all, scripted, snapshot, ALL_TYPES};

fn simulated(profile: sim::Profile) -> impl Fn(&str, &str) -> Result<Gateway, LlmError> + Sync {
    let tasks = bundled::task_set();
    move |_: &str, _: &str| Ok(Gateway::new(Box::new(sim::backend(tasks.clone(), profile))))
}

#[test]
fn bundled_scenario_builds_and_tests() {
    let tasks = bundled::task_set();
    let cfg = PipelineConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let sessions = scripted("bundled");
    let builds = build_all(&tasks, &ALL_TYPES, &sessions, dir.path(), &cfg);
    for b in &builds {
        assert_eq!(b.status, BuildStatus::Verified, "{}: {:?}", b.task_type_id, b.reason);
        assert_eq!(b.seen.len(), cfg.n);
        assert_eq!(b.exploration_episodes.get(&1), Some(&1));
    }
    let refinements: Vec<u32> = builds.iter().map(|b| b.refinements_used).collect();
    assert_eq!(refinements, [1, 0, 1, 0, 0]);

    let note = &builds[0];
    let initial: Vec<&str> = note.versions[0].rpa.params.iter().map(|p| p.name.as_str()).collect();
    let refined: Vec<&str> = note.rpa.as_ref().unwrap().params.iter().map(|p| p.name.as_str()).collect();
    assert_eq!(initial, ["file_name", "text"]);
    assert_eq!(refined, ["file_name", "file_extension", "text"]);
    let failed = note.verification.iter().find(|v| !v.passed).unwrap();
    assert_eq!(failed.seed, 2);
    assert_eq!(failed.outcome, Outcome::AssertFailed);
    assert_eq!(failed.failure.as_deref(), Some("Failed to find file name input field."));
    assert_eq!(note.repairs.len(), 1);
    assert_eq!((note.repairs[0].verdict.as_str(), note.repairs[0].splice, note.repairs[0].tail_reward), ("Y", 2, 1));

    let report = evaluate(&tasks, &builds, &[0], Mode::CodeOnly, &cfg, &sessions).unwrap();
    assert_eq!(report.success_rate, 1.0);
    let red = report.reduction.as_ref().unwrap();
    assert_eq!((red.rpa_total, red.react_total), (1082, 21865));
    assert!(report.token_ratio().unwrap() <= 0.2);
    let agents: BTreeSet<&str> = report.rows.iter().flat_map(|r| r.agents.keys().map(String::as_str)).collect();
    assert!(agents.is_subset(&BTreeSet::from(["executor", "grounder", "mllm"])), "{agents:?}");
    assert!(report.rows.iter().all(|r| r.mode == RowPath::Rpa));
    assert!(report.baseline.iter().all(|r| r.mode == RowPath::React && r.reward == 1));
}

#[test]
fn stored_trajectories_replay_exactly() {
    let tasks = bundled::task_set();
    let dir = tempfile::tempdir().unwrap();
    build_all(&tasks, &ALL_TYPES, &scripted("bundled"), dir.path(), &PipelineConfig::default());
    let mut n = 0;
    for t in ALL_TYPES {
        let bank = Bank::open(dir.path().join(t)).unwrap();
        for id in bank.ids() {
            bank.verify_layers(id).unwrap();
            assert_eq!(replay(&tasks, bank.get(id).unwrap()).unwrap(), vec![], "{id}");
            n += 1;
        }
    }
    assert!(n >= 20);
}

#[test]
fn builder_is_capped_at_m_refinements() {
    let tasks = bundled::task_set();
    let cfg = PipelineConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let sessions = scripted("broken-builder");
    let b = &build_all(&tasks, &[NOTE_CREATE], &sessions, dir.path(), &cfg)[0];
    assert_eq!(b.status, BuildStatus::NonAutomatable);
    assert_eq!(b.refinements_used, cfg.m);
    assert_eq!(b.builder_calls, 1 + cfg.m);
    assert_eq!(b.versions.len() as u32, 1 + cfg.m);
    assert!(b.reason.as_deref().unwrap().contains("after 3 refinement(s)"));

    // autorpa falls back to ReAct, code_only runs the best unverified program
    let auto = evaluate(&tasks, std::slice::from_ref(b), &[0], Mode::Autorpa, &cfg, &sessions).unwrap();
    assert_eq!(auto.rows[0].mode, RowPath::ReactFallback);
    let code = evaluate(&tasks, std::slice::from_ref(b), &[0], Mode::CodeOnly, &cfg, &sessions).unwrap();
    assert_eq!(code.rows[0].mode, RowPath::Rpa);
    assert_eq!(code.rows[0].reward, 0);
}

#[test]
fn exploration_is_capped_at_n_ref_retries() {
    let tasks = bundled::task_set();
    let cfg = PipelineConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let b = &build_all(&tasks, &[NOTE_CREATE], &scripted("failing-react"), dir.path(), &cfg)[0];
    assert_eq!(b.status, BuildStatus::NonAutomatable);
    assert_eq!(b.exploration_episodes.values().sum::<u32>(), cfg.n_ref + 1);
    assert_eq!(b.builder_calls, 0);
    assert!(b.rpa.is_none());
    let bank = Bank::open(dir.path().join(NOTE_CREATE)).unwrap();
    assert_eq!(bank.len() as u32, cfg.n_ref + 1);
    for id in bank.ids() {
        assert!(bank.get(id).unwrap().conclusion.reflection.is_some(), "{id}");
    }
}

#[test]
fn zero_refinements_means_first_failure_is_final() {
    let tasks = bundled::task_set();
    let cfg = PipelineConfig { m: 0, ..PipelineConfig::default() };
    let sessions = simulated(sim::Profile::Default);
    for (t, verified) in [(NOTE_CREATE, false), (bundled::FORM_FILL, true)] {
        let dir = tempfile::tempdir().unwrap();
        let mut bank = Bank::open(dir.path()).unwrap();
        let gw = autorpa_core::pipeline::Sessions::open(&sessions, t, "build").unwrap();
        let b = build_task_type(&tasks, t, &gw, &mut bank, &cfg).unwrap();
        assert_eq!(b.status == BuildStatus::Verified, verified, "{t}");
        assert_eq!(b.builder_calls, 1);
        assert_eq!(b.refinements_used, 0);
    }
}

#[test]
fn evaluation_is_deterministic() {
    let tasks = bundled::task_set();
    let cfg = PipelineConfig::default();
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let sessions = scripted("bundled");
        let builds = build_all(&tasks, &ALL_TYPES, &sessions, dir.path(), &cfg);
        let report = evaluate(&tasks, &builds, &[0], Mode::Autorpa, &cfg, &sessions).unwrap();
        (serde_json::to_string(&builds).unwrap(), serde_json::to_string(&report).unwrap(), snapshot(dir.path()))
    };
    assert_eq!(run(), run());
}

#[test]
fn empty_evaluation_reports_zeros() {
    let tasks = bundled::task_set();
    let cfg = PipelineConfig::default();
    let r = evaluate(&tasks, &[], &[0], Mode::CodeOnly, &cfg, &scripted("bundled")).unwrap();
    assert_eq!((r.success_rate, r.mean_tokens, r.mean_wall_time_ms), (0.0, 0.0, 0.0));
    assert!(r.reduction.is_none());
    assert_eq!(r.objective, 1.0);
    assert_eq!(r.violations(None, Some(0.2)).len(), 1);
    assert_eq!(TestReport::assemble(Mode::React, &[], vec![], 0.0).rows.len(), 0);
}

#[test]
fn unified_mode_skips_the_translator() {
    let tasks = bundled::task_set();
    let sessions = simulated(sim::Profile::Default);
    for unified in [false, true] {
        let cfg = PipelineConfig { unified_translator: unified, ..PipelineConfig::default() };
        for t in ALL_TYPES {
            let dir = tempfile::tempdir().unwrap();
            let mut bank = Bank::open(dir.path()).unwrap();
            let gw = autorpa_core::pipeline::Sessions::open(&sessions, t, "build").unwrap();
            let b = build_task_type(&tasks, t, &gw, &mut bank, &cfg).unwrap();
            assert_eq!(b.status, BuildStatus::Verified, "{t} unified={unified}");
            let used = gw.ledger().by_agent().contains_key(&AgentTag::Translator);
            assert_eq!(used, !unified, "{t} unified={unified}");
        }
    }
}
