mod common;

use autorpa_core::bank::{concat_hybrid, simplify, Bank, BankError, Layer, TrajKind};
use common::{analyzer, chain, hybrid_parts, snapshot, trajectory};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn simplify_keeps_actions_and_conclusion(t in trajectory()) {
        let s = simplify(&t);
        prop_assert_eq!(s.steps.len(), t.steps.len());
        prop_assert_eq!(&s.conclusion, &t.conclusion);
        for (a, b) in s.steps.iter().zip(&t.steps) {
            prop_assert_eq!(&a.action, &b.code);
            prop_assert_eq!(&a.result, &b.rho);
        }
        let json = serde_json::to_string(&s).unwrap();
        prop_assert!(!json.contains("screen_id"));
        prop_assert!(!json.contains("elements"));
    }

    #[test]
    fn hybrid_length_law((program, tail, resume) in hybrid_parts()) {
        let end = program.o_final.clone();
        let (p_len, t_len) = (program.steps.len(), tail.steps.len());
        let h = concat_hybrid(&program.steps, &end, analyzer(resume), "boom", tail).unwrap();
        let splice = if resume { p_len } else { 0 };
        prop_assert_eq!(h.steps.len(), splice + t_len);
        prop_assert_eq!(h.splice, Some(splice));
        prop_assert_eq!(h.kind, TrajKind::Hybrid);
        prop_assert_eq!(simplify(&h).steps.len(), h.steps.len());
    }

    #[test]
    fn resume_needs_a_matching_screen(prog in proptest::collection::vec(1usize..5, 1..6), other in 0usize..5) {
        let program = chain(TrajKind::CodeExec, 1, &prog, 0);
        let last = *prog.last().unwrap();
        prop_assume!(other != last);
        let tail = chain(TrajKind::React, 1, &[other, last], 1);
        let r = concat_hybrid(&program.steps, &program.o_final, analyzer(true), "boom", tail.clone());
        let gap = matches!(r, Err(BankError::ObservationGap { .. }));
        prop_assert!(gap, "{:?}", r);
        // the same tail is fine after a restart verdict
        let h = concat_hybrid(&program.steps, &program.o_final, analyzer(false), "boom", tail).unwrap();
        prop_assert_eq!(h.splice, Some(0));
    }

    #[test]
    fn store_reload_and_restore_are_lossless(ts in proptest::collection::vec(trajectory(), 1..5)) {
        let a = tempfile::tempdir().unwrap();
        let mut bank = Bank::open(a.path()).unwrap();
        let ids: Vec<String> = ts.iter().map(|t| bank.store(t.clone()).unwrap()).collect();
        let reopened = Bank::open(a.path()).unwrap();
        prop_assert_eq!(reopened.ids(), &ids[..]);
        let b = tempfile::tempdir().unwrap();
        let mut copy = Bank::open(b.path()).unwrap();
        for (id, t) in ids.iter().zip(&ts) {
            let got = reopened.get(id).unwrap();
            prop_assert_eq!(got, t);
            reopened.verify_layers(id).unwrap();
            prop_assert_eq!(reopened.simplified(id).unwrap(), &simplify(got));
            let len = got.steps.len();
            prop_assert!(len == 0 || reopened.fetch_info(id, Some(len)).is_ok());
            let over = reopened.fetch_info(id, Some(len + 1));
            let over_ok = matches!(over, Err(BankError::StepOutOfRange { step, .. }) if step == len + 1);
            prop_assert!(over_ok);
            let zero_ok = matches!(reopened.fetch_info(id, Some(0)), Err(BankError::StepOutOfRange { .. }));
            prop_assert!(zero_ok);
            copy.store(got.clone()).unwrap();
        }
        prop_assert_eq!(snapshot(a.path()), snapshot(b.path()));
    }
}

#[test]
fn broken_chain_is_rejected() {
    let mut t = chain(TrajKind::React, 0, &[0, 1, 2], 1);
    t.steps[1].obs = t.steps[0].obs.clone();
    let dir = tempfile::tempdir().unwrap();
    let mut bank = Bank::open(dir.path()).unwrap();
    assert!(matches!(bank.store(t), Err(BankError::InvariantViolation(_))));
    assert!(bank.is_empty());
}

#[test]
fn observations_are_stored_once() {
    let dir = tempfile::tempdir().unwrap();
    let mut bank = Bank::open(dir.path()).unwrap();
    bank.store(chain(TrajKind::React, 0, &[0, 1, 0, 1], 1)).unwrap();
    bank.store(chain(TrajKind::React, 1, &[1, 0], 1)).unwrap();
    let text = std::fs::read_to_string(dir.path().join("observations.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn torn_tail_and_orphans_are_ignored() {
    let dir = tempfile::tempdir().unwrap();
    let mut bank = Bank::open(dir.path()).unwrap();
    let id = bank.store(chain(TrajKind::React, 0, &[0, 1, 2], 1)).unwrap();
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new().append(true).open(dir.path().join("blocks.jsonl")).unwrap();
    writeln!(f, "{{\"traj_id\":\"ghost\",\"step\":1,").unwrap();
    let reopened = Bank::open(dir.path()).unwrap();
    assert_eq!(reopened.ids(), std::slice::from_ref(&id));
    assert!(matches!(reopened.get("ghost"), Err(BankError::UnknownTrajectory(_))));
}

#[test]
fn layers_render() {
    let dir = tempfile::tempdir().unwrap();
    let mut bank = Bank::open(dir.path()).unwrap();
    let id = bank.store(chain(TrajKind::React, 0, &[0, 1, 2], 0)).unwrap();
    assert_eq!(id, "t-s0-react-001");
    let bottom = bank.layer(&id, Layer::Bottom, None).unwrap();
    assert!(bottom.contains("Step 1 of 2") && bottom.contains("Step 2 of 2"));
    assert_eq!(bank.layer(&id, Layer::Middle, None).unwrap(), bank.fetch_info(&id, None).unwrap());
    let top = bank.layer(&id, Layer::Top, None).unwrap();
    assert!(top.contains("reflection: try harder"));
    assert!(!bank.layer(&id, Layer::Middle, None).unwrap().contains("label"));
}
