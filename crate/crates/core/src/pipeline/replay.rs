//! Deterministic replay of stored trajectories.

use serde::{Deserialize, Serialize};

use crate::bank::FullTrajectory;
use crate::env::{GuiEnv, TaskSet};

use super::PipelineError;

/// A point where the replayed screen differs from the stored one. Step 0 is
/// the first observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayDiff {
    pub step: usize,
    pub expected: String,
    pub found: String,
}

/// Re-executes the hard actions of `t` on a fresh instance and lists every
/// screen that differs. Stops at the first action the environment rejects.
pub fn replay(tasks: &TaskSet, t: &FullTrajectory) -> Result<Vec<ReplayDiff>, PipelineError> {
    let mut env = GuiEnv::instantiate(tasks, &t.task.task_type_id, t.task.seed)?;
    let mut diffs = Vec::new();
    let mut check = |step: usize, expected: &str, found: &str| {
        if expected != found {
            diffs.push(ReplayDiff { step, expected: expected.to_string(), found: found.to_string() });
        }
    };
    check(0, &t.first_observation().screen_id, &env.observe().screen_id);
    for (i, s) in t.steps.iter().enumerate() {
        match env.step(&s.hard) {
            Ok(obs) => check(i + 1, &s.obs_after.screen_id, &obs.screen_id),
            Err(e) => {
                check(i + 1, &s.obs_after.screen_id, &format!("<{e}>"));
                break;
            }
        }
    }
    Ok(diffs)
}
