use super::*;
use crate::bundled::{self, FORM_FILL, LIST_SEARCH, NOTE_CREATE, TIC_TAC_TOE};
use proptest::prelude::*;

fn env(id: &str, seed: u64) -> GuiEnv {
    GuiEnv::instantiate(&bundled::task_set(), id, seed).unwrap()
}

fn index_of(obs: &Observation, pred: impl Fn(&Element) -> bool) -> i64 {
    obs.elements.iter().position(pred).expect("element present") as i64
}

fn by_text(obs: &Observation, text: &str) -> i64 {
    index_of(obs, |e| e.text.as_deref() == Some(text))
}

fn by_desc(obs: &Observation, d: &str) -> i64 {
    index_of(obs, |e| e.content_description.as_deref() == Some(d))
}

/// Drives note-create to the editor with the given typed name and extension.
fn create_note(env: &mut GuiEnv, name: &str, ext: &str, content: &str) {
    env.step(&HardAction::open_app("Markor")).unwrap();
    let fab = by_desc(env.observe(), "Create a new file or folder");
    env.step(&HardAction::click(fab)).unwrap();
    if env.state_value("dialog_ready") == Some("no") {
        env.step(&HardAction::wait()).unwrap();
    }
    let name_idx = index_of(env.observe(), |e| e.hint_text.as_deref() == Some("my_note"));
    env.step(&HardAction::input_text(name_idx, name)).unwrap();
    let ext_idx = index_of(env.observe(), |e| e.hint_text.as_deref() == Some(".md"));
    env.step(&HardAction::input_text(ext_idx, ext)).unwrap();
    let ok = by_text(env.observe(), "OK");
    env.step(&HardAction::click(ok)).unwrap();
    let content_idx = index_of(env.observe(), |e| e.additional_actions.contains(&ActionTag::InputText));
    env.step(&HardAction::input_text(content_idx, content)).unwrap();
    let save = by_desc(env.observe(), "Save");
    env.step(&HardAction::click(save)).unwrap();
}

#[test]
fn instantiate_is_deterministic() {
    let a = env(NOTE_CREATE, 1);
    let b = env(NOTE_CREATE, 1);
    assert_eq!(a.instance(), b.instance());
    assert_eq!(a.observe(), b.observe());
}

#[test]
fn different_seeds_bind_different_file_names() {
    let tasks = bundled::task_set();
    let tt = tasks.get(NOTE_CREATE).unwrap();
    let one = tt.instantiate(1).unwrap();
    let two = tt.instantiate(2).unwrap();
    // Enumerated from the generators: ext cycles [txt, md], so seed 1 -> md, seed 2 -> txt.
    assert_eq!(one.bindings["ext"], "md");
    assert_eq!(two.bindings["ext"], "txt");
    assert_ne!(one.bindings["file_name"], two.bindings["file_name"]);
}

#[test]
fn building_and_testing_seeds_give_four_distinct_instances() {
    let tasks = bundled::task_set();
    for tt in tasks.types().iter().filter(|t| t.id != TIC_TAC_TOE) {
        let bindings: Vec<_> = [0u64, 1, 2, 3].iter().map(|s| tt.instantiate(*s).unwrap().bindings).collect();
        for i in 0..4 {
            for j in (i + 1)..4 {
                assert_ne!(bindings[i], bindings[j], "{} seeds {i} and {j}", tt.id);
            }
        }
    }
}

#[test]
fn tic_tac_toe_seeds_differ_in_opponent_play() {
    let first_reply = |seed| {
        let mut e = env(TIC_TAC_TOE, seed);
        let center = index_of(e.observe(), |el| el.tooltip.as_deref() == Some("cell-4"));
        e.step(&HardAction::click(center)).unwrap();
        (0..9).find(|i| e.state_value(&format!("c{i}")) == Some("O")).unwrap()
    };
    let replies: std::collections::BTreeSet<_> = (0..4).map(first_reply).collect();
    assert!(replies.len() > 1);
}

#[test]
fn unknown_task_type_is_not_found() {
    let err = GuiEnv::instantiate(&bundled::task_set(), "nope", 0).unwrap_err();
    assert_eq!(err, EnvError::NotFound("nope".into()));
}

#[test]
fn instruction_substitutes_bindings() {
    let e = env(NOTE_CREATE, 1);
    let inst = e.instance();
    assert_eq!(
        inst.instruction,
        format!("Create a new note in Markor named {} with the following text: {}", inst.bindings["file_name"], inst.bindings["text"])
    );
}

#[test]
fn clicking_the_fab_opens_the_dialog() {
    let mut e = env(NOTE_CREATE, 1);
    e.step(&HardAction::open_app("Markor")).unwrap();
    let fab = by_desc(e.observe(), "Create a new file or folder");
    let obs = e.step(&HardAction::click(fab)).unwrap();
    assert!(obs.screen_id.starts_with("new_file_dialog/"));
    assert!(obs.elements.iter().any(|el| el.text.as_deref() == Some("Create new file")));
    assert!(obs.elements.iter().any(|el| el.hint_text.as_deref() == Some("my_note")));
}

#[test]
fn slow_dialog_needs_a_wait_on_txt_instances() {
    let mut e = env(NOTE_CREATE, 2);
    e.step(&HardAction::open_app("Markor")).unwrap();
    let fab = by_desc(e.observe(), "Create a new file or folder");
    let obs = e.step(&HardAction::click(fab)).unwrap();
    assert!(!obs.elements.iter().any(|el| el.hint_text.as_deref() == Some("my_note")));
    let obs = e.step(&HardAction::wait()).unwrap();
    assert!(obs.elements.iter().any(|el| el.hint_text.as_deref() == Some("my_note")));
}

#[test]
fn input_on_plain_element_is_unsupported() {
    let mut e = env(NOTE_CREATE, 1);
    e.step(&HardAction::open_app("Markor")).unwrap();
    let title = by_text(e.observe(), "Markor");
    let err = e.step(&HardAction::input_text(title, "x")).unwrap_err();
    assert!(matches!(err, EnvError::UnsupportedAction { action: "input_text", .. }));
    let err = e.step(&HardAction::long_press(title)).unwrap_err();
    assert!(matches!(err, EnvError::UnsupportedAction { action: "long_press", .. }));
    // a failed step does not advance the episode
    assert_eq!(e.steps_taken(), 1);
}

#[test]
fn out_of_range_index_is_rejected() {
    let mut e = env(NOTE_CREATE, 1);
    let n = e.observe().elements.len() as i64;
    assert_eq!(e.step(&HardAction::click(n)).unwrap_err(), EnvError::InvalidIndex { index: n, len: n as usize });
    assert!(matches!(e.step(&HardAction::click(-1)).unwrap_err(), EnvError::InvalidIndex { .. }));
}

#[test]
fn step_cap_ends_episode_with_zero_reward() {
    let mut e = env(FORM_FILL, 1);
    assert_eq!(e.step_cap(), 20);
    for _ in 0..20 {
        e.step(&HardAction::wait()).unwrap();
    }
    assert!(e.is_terminal());
    assert_eq!(e.reward().unwrap(), 0);
    assert_eq!(e.step(&HardAction::wait()).unwrap_err(), EnvError::EpisodeOver);
}

#[test]
fn correct_note_earns_reward() {
    let mut e = env(NOTE_CREATE, 1);
    let b = e.instance().bindings.clone();
    create_note(&mut e, &b["stem"], ".md", &b["text"]);
    assert_eq!(e.reward(), Err(EnvError::NotTerminal));
    e.step(&HardAction::stop(StopStatus::Complete)).unwrap();
    assert_eq!(e.reward().unwrap(), 1);
    assert_eq!(e.reward().unwrap(), 1, "reward is stable once terminal");
}

#[test]
fn wrong_extension_earns_nothing() {
    let mut e = env(NOTE_CREATE, 2);
    let b = e.instance().bindings.clone();
    assert_eq!(b["ext"], "txt");
    create_note(&mut e, &b["stem"], ".md", &b["text"]);
    e.step(&HardAction::stop(StopStatus::Complete)).unwrap();
    assert_eq!(e.reward().unwrap(), 0);
}

#[test]
fn infeasible_stop_earns_nothing() {
    let mut e = env(NOTE_CREATE, 1);
    let b = e.instance().bindings.clone();
    create_note(&mut e, &b["stem"], ".md", &b["text"]);
    e.step(&HardAction::stop(StopStatus::Infeasible)).unwrap();
    assert_eq!(e.reward().unwrap(), 0);
}

#[test]
fn swipe_shifts_the_list_window() {
    let mut e = env(LIST_SEARCH, 0);
    e.step(&HardAction::open_app("Shop")).unwrap();
    let visible = |e: &GuiEnv, t: &str| e.observe().elements.iter().any(|el| el.text.as_deref() == Some(t));
    assert!(visible(&e, "Apples"));
    assert!(!visible(&e, "Walnuts"));
    e.step(&HardAction::swipe(Direction::Up)).unwrap();
    assert!(visible(&e, "Walnuts"));
    assert!(!visible(&e, "Apples"));
    e.step(&HardAction::swipe(Direction::Down)).unwrap();
    assert!(visible(&e, "Apples"));
    assert!(e.observe().indices_contiguous());
}

#[test]
fn opponent_moves_are_seeded() {
    let play = |seed| {
        let mut e = env(TIC_TAC_TOE, seed);
        let center = index_of(e.observe(), |el| el.tooltip.as_deref() == Some("cell-4"));
        e.step(&HardAction::click(center)).unwrap();
        (0..9).map(|i| e.state_value(&format!("c{i}")).unwrap().to_string()).collect::<Vec<_>>()
    };
    assert_eq!(play(1), play(1));
    let board = play(1);
    assert_eq!(board.iter().filter(|c| *c == "O").count(), 1);
    assert_eq!(board[4], "X");
}

#[test]
fn occupied_cell_click_is_a_no_op() {
    let mut e = env(TIC_TAC_TOE, 3);
    let center = index_of(e.observe(), |el| el.tooltip.as_deref() == Some("cell-4"));
    e.step(&HardAction::click(center)).unwrap();
    let before: Vec<_> = (0..9).map(|i| e.state_value(&format!("c{i}")).unwrap().to_string()).collect();
    let obs_before = e.observe().clone();
    let obs_after = e.step(&HardAction::click(center)).unwrap();
    let after: Vec<_> = (0..9).map(|i| e.state_value(&format!("c{i}")).unwrap().to_string()).collect();
    assert_eq!(before, after);
    assert_eq!(obs_before.screen_id, obs_after.screen_id);
}

#[test]
fn task_file_round_trips() {
    let tasks = bundled::task_set();
    let again = TaskSet::from_json(&tasks.to_json()).unwrap();
    assert_eq!(tasks, again);
    if std::env::var_os("AUTORPA_BLESS").is_some() {
        std::fs::write(concat!(env!("CARGO_MANIFEST_DIR"), "/assets/tasks.json"), tasks.to_json()).unwrap();
    } else {
        assert_eq!(tasks.to_json(), bundled::TASKS_JSON, "asset is stored in canonical form");
    }
}

#[test]
fn template_placeholders_must_be_declared() {
    let mut tt = bundled::task_set().get(NOTE_CREATE).unwrap().clone();
    tt.template.push_str(" {undeclared}");
    assert!(matches!(tt.validate(), Err(EnvError::Definition(_))));
}

fn arb_action() -> impl Strategy<Value = HardAction> {
    prop_oneof![
        (0i64..12).prop_map(HardAction::click),
        (0i64..12).prop_map(HardAction::long_press),
        (0i64..12, "[a-z]{0,4}").prop_map(|(i, t)| HardAction::input_text(i, t)),
        Just(HardAction::swipe(Direction::Up)),
        Just(HardAction::swipe(Direction::Down)),
        Just(HardAction::wait()),
        Just(HardAction::go_back()),
        Just(HardAction::open_app("Markor")),
        Just(HardAction::open_app("Shop")),
        Just(HardAction::open_app("Settings")),
    ]
}

fn run(id: &str, seed: u64, actions: &[HardAction]) -> Vec<Result<Observation, EnvError>> {
    let mut e = env(id, seed);
    actions.iter().map(|a| e.step(a)).collect()
}

proptest! {
    #[test]
    fn observation_sequences_are_deterministic(
        task in 0usize..5,
        seed in 0u64..6,
        actions in proptest::collection::vec(arb_action(), 0..30),
    ) {
        let id = bundled::task_set().types()[task].id.clone();
        let a = run(&id, seed, &actions);
        let b = run(&id, seed, &actions);
        prop_assert_eq!(&a, &b);
        for obs in a.iter().flatten() {
            prop_assert!(obs.indices_contiguous());
        }
    }

    #[test]
    fn terminal_episodes_stay_terminal(
        seed in 0u64..4,
        actions in proptest::collection::vec(arb_action(), 0..25),
    ) {
        let mut e = env(NOTE_CREATE, seed);
        for a in &actions {
            let _ = e.step(a);
        }
        let _ = e.step(&HardAction::stop(StopStatus::Complete));
        prop_assert!(e.is_terminal());
        let r = e.reward().unwrap();
        prop_assert_eq!(e.step(&HardAction::wait()).unwrap_err(), EnvError::EpisodeOver);
        prop_assert_eq!(e.reward().unwrap(), r);
    }

    #[test]
    fn unsupported_actions_never_change_state(
        task in 0usize..5,
        seed in 0u64..4,
        actions in proptest::collection::vec(arb_action(), 0..20),
    ) {
        let id = bundled::task_set().types()[task].id.clone();
        let mut e = env(&id, seed);
        for a in &actions {
            let before = e.observe().clone();
            let steps = e.steps_taken();
            if let Err(EnvError::UnsupportedAction { .. } | EnvError::InvalidIndex { .. }) = e.step(a) {
                prop_assert_eq!(&before, e.observe());
                prop_assert_eq!(steps, e.steps_taken());
            }
        }
    }
}
