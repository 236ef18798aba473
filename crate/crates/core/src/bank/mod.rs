//! Three-layer trajectory bank.
//!
//! Every stored run keeps its raw interaction blocks (bottom), a simplified
//! action/result outline (middle) and its conclusion (top). Blocks overlap:
//! the screen after step `t` is the screen before step `t + 1`.

mod store;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AnalyzerOutput, Conclusion};
use crate::dsl::ExecTrace;
use crate::env::{HardAction, Observation, TaskInstance};

pub use store::{Bank, Manifest};

#[derive(Debug, Error)]
pub enum BankError {
    #[error("trajectory invariant violated: {0}")]
    InvariantViolation(String),
    #[error("unknown trajectory {0}")]
    UnknownTrajectory(String),
    #[error("step {step} is out of range for {id} (1..={len})")]
    StepOutOfRange { id: String, step: usize, len: usize },
    #[error("observation gap at splice: program ended on {expected}, resumed run starts on {found}")]
    ObservationGap { expected: String, found: String },
    #[error("{file}:{line}: {msg}")]
    Corrupt { file: String, line: usize, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajKind {
    React,
    Hybrid,
    CodeExec,
}

impl TrajKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TrajKind::React => "react",
            TrajKind::Hybrid => "hybrid",
            TrajKind::CodeExec => "code",
        }
    }
}

/// One interaction block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajStep {
    pub obs: Observation,
    /// Soft-coded action, or the program statement that issued the call.
    pub code: String,
    pub hard: HardAction,
    pub rho: String,
    pub obs_after: Observation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FullTrajectory {
    pub task: TaskInstance,
    pub kind: TrajKind,
    pub steps: Vec<TrajStep>,
    pub o_final: Observation,
    pub reward: u8,
    pub conclusion: Conclusion,
    /// Hybrid only: number of leading program steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splice: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analyzer: Option<AnalyzerOutput>,
    /// Hybrid only: why the program stopped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl FullTrajectory {
    /// Screen before the first step.
    pub fn first_observation(&self) -> &Observation {
        self.steps.first().map(|s| &s.obs).unwrap_or(&self.o_final)
    }

    pub fn check(&self) -> Result<(), BankError> {
        let bad = |m: String| Err(BankError::InvariantViolation(m));
        for (t, w) in self.steps.windows(2).enumerate() {
            if w[0].obs_after != w[1].obs {
                return bad(format!("block {} ends on {} but block {} starts on {}", t + 1, w[0].obs_after.screen_id, t + 2, w[1].obs.screen_id));
            }
        }
        if let Some(last) = self.steps.last() {
            if last.obs_after != self.o_final {
                return bad(format!("last block ends on {} but the final screen is {}", last.obs_after.screen_id, self.o_final.screen_id));
            }
        }
        match (self.kind, self.splice) {
            (TrajKind::Hybrid, Some(s)) if s <= self.steps.len() => {}
            (TrajKind::Hybrid, _) => return bad("hybrid trajectory needs a splice index within its steps".into()),
            (_, Some(_)) => return bad("only hybrid trajectories carry a splice index".into()),
            _ => {}
        }
        if self.reward > 1 {
            return bad(format!("reward {} is not binary", self.reward));
        }
        if self.kind != TrajKind::CodeExec && self.conclusion.reflection.is_some() != (self.reward == 0) {
            return bad("a reflection must be present exactly when the run failed".into());
        }
        Ok(())
    }

    /// Program run as a trajectory; steps are the executed calls.
    pub fn from_exec(task: TaskInstance, trace: &ExecTrace, reward: u8) -> Self {
        let steps: Vec<TrajStep> = trace
            .steps
            .iter()
            .map(|s| TrajStep {
                obs: s.obs_before.clone(),
                code: s.source.clone(),
                hard: s.action.clone(),
                rho: s.rho.clone(),
                obs_after: s.obs_after.clone(),
            })
            .collect();
        let conclusion = match &trace.breakpoint {
            Some(bp) => format!("The program stopped at line {}: {}", bp.line, bp.message),
            None if reward == 1 => "The program ran to completion and the task succeeded.".into(),
            None => "The program ran to completion but the task was not achieved.".into(),
        };
        FullTrajectory {
            task,
            kind: TrajKind::CodeExec,
            steps,
            o_final: trace.final_observation.clone(),
            reward,
            conclusion: Conclusion { conclusion, reflection: None },
            splice: None,
            analyzer: None,
            failure: trace.breakpoint.as_ref().map(|b| b.message.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimpleStep {
    pub action: String,
    pub result: String,
}

/// Middle layer: what was done and what came of it, without screens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimplifiedTrajectory {
    pub task: String,
    pub kind: TrajKind,
    pub steps: Vec<SimpleStep>,
    pub reward: u8,
    pub conclusion: Conclusion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splice: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analyzer: Option<AnalyzerOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Drops the screens, keeping action and result per step.
pub fn simplify(t: &FullTrajectory) -> SimplifiedTrajectory {
    SimplifiedTrajectory {
        task: t.task.instruction.clone(),
        kind: t.kind,
        steps: t.steps.iter().map(|s| SimpleStep { action: s.code.clone(), result: s.rho.clone() }).collect(),
        reward: t.reward,
        conclusion: t.conclusion.clone(),
        splice: t.splice,
        analyzer: t.analyzer.clone(),
        failure: t.failure.clone(),
    }
}

impl SimplifiedTrajectory {
    pub fn render(&self) -> String {
        let outcome = if self.reward == 1 { "success" } else { "failure" };
        let mut s = format!("Task: {}\nKind: {}\nOutcome: {outcome}\n", self.task, self.kind.as_str());
        for (i, st) in self.steps.iter().enumerate() {
            if self.splice == Some(i) {
                s.push_str(&self.splice_note());
            }
            s.push_str(&format!("Step {}:\n", i + 1));
            for line in st.action.trim_end().lines() {
                s.push_str(&format!("    {line}\n"));
            }
            s.push_str(&format!("Result: {}\n", st.result));
        }
        if self.splice == Some(self.steps.len()) {
            s.push_str(&self.splice_note());
        }
        s.push_str(&format!("Conclusion: {}\n", self.conclusion.conclusion));
        if let Some(r) = &self.conclusion.reflection {
            s.push_str(&format!("Reflection: {r}\n"));
        }
        s
    }

    fn splice_note(&self) -> String {
        let mut s = String::from("--- program stopped");
        if let Some(f) = &self.failure {
            s.push_str(&format!(": {f}"));
        }
        if let Some(a) = &self.analyzer {
            let how = if a.resume { "continued from this screen" } else { "restarted from the beginning" };
            s.push_str(&format!("\n--- analyzer verdict {}: {how}", a.verdict()));
            s.push_str(&format!("\n--- analyzer plan: {}", a.plan_list.replace('\n', " ")));
        }
        s.push_str("\n--- the steps below were taken by the step-by-step agent\n");
        s
    }
}

/// Joins a failed program run and the ReAct run that took over.
///
/// With a `Y` verdict the program's steps are kept and the tail must start
/// on the screen where the program stopped; with `N` the tail ran on a fresh
/// episode and the program steps are dropped.
pub fn concat_hybrid(
    program: &[TrajStep],
    program_end: &Observation,
    analyzer: AnalyzerOutput,
    failure: &str,
    tail: FullTrajectory,
) -> Result<FullTrajectory, BankError> {
    let prefix: Vec<TrajStep> = if analyzer.resume {
        let start = tail.first_observation();
        if start != program_end {
            return Err(BankError::ObservationGap {
                expected: program_end.screen_id.clone(),
                found: start.screen_id.clone(),
            });
        }
        program.to_vec()
    } else {
        Vec::new()
    };
    let splice = prefix.len();
    let mut steps = prefix;
    steps.extend(tail.steps);
    let hybrid = FullTrajectory {
        task: tail.task,
        kind: TrajKind::Hybrid,
        steps,
        o_final: tail.o_final,
        reward: tail.reward,
        conclusion: tail.conclusion,
        splice: Some(splice),
        analyzer: Some(analyzer),
        failure: Some(failure.to_string()),
    };
    hybrid.check()?;
    Ok(hybrid)
}

/// One of the three stored views of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Bottom,
    Middle,
    Top,
}

impl Layer {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bottom" => Some(Layer::Bottom),
            "middle" => Some(Layer::Middle),
            "top" => Some(Layer::Top),
            _ => None,
        }
    }
}

/// Bottom-layer rendering of block `step` (1-based).
pub fn render_block(id: &str, t: &FullTrajectory, step: usize) -> Result<String, BankError> {
    let len = t.steps.len();
    if step == 0 || step > len {
        return Err(BankError::StepOutOfRange { id: id.to_string(), step, len });
    }
    let b = &t.steps[step - 1];
    Ok(format!(
        "Step {step} of {len} in {id}\n[Screen Before]\n{}[Action]\n{}\n[Result]\n{}\n[Screen After]\n{}",
        b.obs.digest(),
        b.code.trim_end(),
        b.rho,
        b.obs_after.digest()
    ))
}
