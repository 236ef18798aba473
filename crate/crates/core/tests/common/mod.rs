#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use autorpa_core::agents::{AnalyzerOutput, Conclusion};
use autorpa_core::bank::{Bank, FullTrajectory, TrajKind, TrajStep};
use autorpa_core::bundled;
use autorpa_core::env::{ActionTag, Element, HardAction, Observation, TaskInstance, TaskSet};
use autorpa_core::llm::{FixtureFile, Gateway, LlmError, ScriptedBackend, Strictness};
use autorpa_core::matcher::{Grounder, MatchError, MatchSpec, MatcherConfig};
use autorpa_core::pipeline::{build_task_type, BuildState, PipelineConfig, Sessions};
use proptest::prelude::*;
use serde_json::Value;

pub fn fixtures_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Gateways replaying the recorded fixture set `set` with exact matching.
pub fn scripted(set: &str) -> impl Sessions {
    let root = fixtures_root().join(set);
    move |task: &str, session: &str| -> Result<Gateway, LlmError> {
        let file = FixtureFile::load(&root.join(task).join(format!("{session}.jsonl")))?;
        Ok(Gateway::new(Box::new(ScriptedBackend::new(file, Strictness::Exact))))
    }
}

/// Builds `types` into per-type banks under `bank_root`.
pub fn build_all(tasks: &TaskSet, types: &[&str], sessions: &dyn Sessions, bank_root: &Path, cfg: &PipelineConfig) -> Vec<BuildState> {
    types
        .iter()
        .map(|t| {
            let mut bank = Bank::open(bank_root.join(t)).unwrap();
            let gw = sessions.open(t, "build").unwrap();
            let st = build_task_type(tasks, t, &gw, &mut bank, cfg).unwrap();
            gw.finish().unwrap();
            st
        })
        .collect()
}

pub const ALL_TYPES: [&str; 5] =
    [bundled::NOTE_CREATE, bundled::FORM_FILL, bundled::LIST_SEARCH, bundled::SETTINGS_THEME, bundled::TIC_TAC_TOE];

/// Every file under `dir` with its bytes, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

// ---- matcher ----

const WORDS: [&str; 4] = ["Save", "save", "OK", "Name"];

fn word() -> impl Strategy<Value = String> {
    proptest::sample::select(&WORDS[..]).prop_map(str::to_string)
}

fn tags() -> impl Strategy<Value = BTreeSet<ActionTag>> {
    proptest::collection::btree_set(proptest::sample::select(vec![ActionTag::LongPress, ActionTag::InputText, ActionTag::Swipe]), 0..3)
}

pub fn element(index: usize) -> impl Strategy<Value = Element> {
    (
        proptest::option::weighted(0.7, word()),
        proptest::option::weighted(0.7, word()),
        proptest::option::weighted(0.7, word()),
        proptest::option::weighted(0.7, word()),
        tags(),
        any::<bool>(),
    )
        .prop_map(move |(text, hint, desc, tip, actions, editable)| {
            let mut e = Element::new(index);
            e.text = text;
            e.hint_text = hint;
            e.content_description = desc;
            e.tooltip = tip;
            e.additional_actions = actions;
            e.editable = editable;
            e
        })
}

pub fn screen() -> impl Strategy<Value = Observation> {
    (0usize..8)
        .prop_flat_map(|n| (0..n).map(element).collect::<Vec<_>>())
        .prop_map(|elements| Observation { screen_id: "s".into(), elements, screenshot_ref: None })
}

pub fn spec() -> impl Strategy<Value = MatchSpec> {
    (
        proptest::option::weighted(0.3, word()),
        proptest::option::weighted(0.3, word()),
        proptest::option::weighted(0.3, word()),
        proptest::option::weighted(0.3, word()),
        proptest::option::weighted(0.2, tags()),
        proptest::option::weighted(0.3, any::<bool>()),
    )
        .prop_map(|(text, hint_text, content_description, tooltip, additional_actions, editable)| MatchSpec {
            text,
            hint_text,
            content_description,
            tooltip,
            additional_actions,
            editable,
            target_description: "the target".into(),
        })
}

/// Brute force over the JSON forms: every constraint key is checked on its
/// own against the element's attribute dictionary.
pub fn oracle(spec: &MatchSpec, obs: &Observation, case_insensitive: bool) -> Vec<i64> {
    let want = spec.to_json();
    let norm = |s: &str| if case_insensitive { s.to_lowercase() } else { s.to_string() };
    let mut out = Vec::new();
    'elements: for e in &obs.elements {
        let have = e.to_json();
        for (k, w) in want.as_object().unwrap() {
            let h = have.get(k.as_str());
            let ok = match k.as_str() {
                "target_description" => true,
                "additional_actions" => {
                    let hs: Vec<&Value> = h.and_then(Value::as_array).map(|a| a.iter().collect()).unwrap_or_default();
                    w.as_array().unwrap().iter().all(|x| hs.contains(&x))
                }
                "editable" => h.and_then(Value::as_bool).unwrap_or(false) == w.as_bool().unwrap(),
                _ => h.and_then(Value::as_str).map(norm) == w.as_str().map(norm),
            };
            if !ok {
                continue 'elements;
            }
        }
        out.push(e.index as i64);
    }
    out
}

/// Answers with a fixed reply and counts how often it was asked.
pub struct CountingGrounder {
    pub reply: String,
    pub calls: usize,
}

impl Grounder for CountingGrounder {
    fn ground(&mut self, _prompt: &str) -> Result<String, MatchError> {
        self.calls += 1;
        Ok(self.reply.clone())
    }
}

pub fn cfg(case_insensitive: bool) -> MatcherConfig {
    MatcherConfig { case_insensitive }
}

// ---- trajectories ----

fn observation(i: usize) -> Observation {
    let mut e = Element::new(0);
    e.text = Some(format!("label {i}"));
    Observation { screen_id: format!("screen{i}/{i:010}"), elements: vec![e], screenshot_ref: None }
}

pub fn task(seed: u64) -> TaskInstance {
    TaskInstance {
        task_type_id: "t".into(),
        seed,
        instruction: format!("Do the thing number {seed}"),
        bindings: BTreeMap::new(),
    }
}

fn conclusion(reward: u8) -> Conclusion {
    Conclusion {
        conclusion: format!("finished with reward {reward}"),
        reflection: (reward == 0).then(|| "try harder".to_string()),
    }
}

/// A chained trajectory over screens `path` (one more screen than steps).
pub fn chain(kind: TrajKind, seed: u64, path: &[usize], reward: u8) -> FullTrajectory {
    let steps = path
        .windows(2)
        .enumerate()
        .map(|(i, w)| TrajStep {
            obs: observation(w[0]),
            code: format!("env_op.click({i})\n"),
            hard: HardAction::click(i as i64),
            rho: format!("went from {} to {}", w[0], w[1]),
            obs_after: observation(w[1]),
        })
        .collect();
    FullTrajectory {
        task: task(seed),
        kind,
        steps,
        o_final: observation(*path.last().unwrap()),
        reward,
        conclusion: conclusion(reward),
        splice: None,
        analyzer: None,
        failure: (kind == TrajKind::CodeExec && reward == 0).then(|| "stopped".to_string()),
    }
}

pub fn trajectory() -> impl Strategy<Value = FullTrajectory> {
    (
        prop_oneof![Just(TrajKind::React), Just(TrajKind::CodeExec)],
        0u64..4,
        proptest::collection::vec(0usize..5, 1..9),
        0u8..2,
    )
        .prop_map(|(kind, seed, path, reward)| chain(kind, seed, &path, reward))
}

pub fn analyzer(resume: bool) -> AnalyzerOutput {
    AnalyzerOutput {
        observations: "the dialog is open".into(),
        completed_tasks: "opened the app".into(),
        plan_justification: "finish the rest".into(),
        plan_list: "1. type\n2. save".into(),
        resume,
    }
}

/// Program prefix and ReAct tail; the tail starts where the prefix ended
/// when `resume` holds, on a fresh screen otherwise.
pub fn hybrid_parts() -> impl Strategy<Value = (FullTrajectory, FullTrajectory, bool)> {
    (
        proptest::collection::vec(0usize..5, 1..6),
        proptest::collection::vec(0usize..5, 0..6),
        any::<bool>(),
        0u8..2,
    )
        .prop_map(|(prog, tail_rest, resume, reward)| {
            let program = chain(TrajKind::CodeExec, 1, &prog, 0);
            let start = if resume { *prog.last().unwrap() } else { 0 };
            let mut tail_path = vec![start];
            tail_path.extend(tail_rest);
            (program, chain(TrajKind::React, 1, &tail_path, reward), resume)
        })
}
