//! Declarative task-type definitions: instruction templates, seeded variable
//! generators, screens, transition tables and reward rules.
//!
//! A task file is a JSON document `{"schema": 1, "task_types": [...]}`. The
//! format is described in `docs/task-format.md`; serialization is lossless so a
//! loaded file can be written back unchanged.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::types::{ActionKind, ActionTag, Rect};
use super::EnvError;

pub const TASK_FILE_SCHEMA: u32 = 1;

pub const DEFAULT_STEP_CAP: u32 = 20;

fn default_step_cap() -> u32 {
    DEFAULT_STEP_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFile {
    pub schema: u32,
    pub task_types: Vec<TaskType>,
}

/// How a variable's value is produced from the instance seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// Uniform pick from `values` driven by a seeded RNG.
    Choice { values: Vec<String> },
    /// `values[seed % len]`.
    Cycle { values: Vec<String> },
    IntRange { min: i64, max: i64 },
    /// Pattern over previously generated variables, e.g. `"{stem}.{ext}"`.
    Format { pattern: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarSpec {
    pub name: String,
    #[serde(flatten)]
    pub generator: Generator,
}

/// Predicate over the environment context. String operands are templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cond {
    Always,
    Eq(String, String),
    Ne(String, String),
    EndsWith(String, String),
    Contains(String, String),
    /// Every listed state key holds `value`.
    AllEq { keys: Vec<String>, value: String },
    All(Vec<Cond>),
    Any(Vec<Cond>),
    Not(Box<Cond>),
    /// Named condition from the task type's `conditions` table.
    Ref(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Effect {
    Set {
        key: String,
        value: String,
    },
    /// Sets one randomly chosen key among those currently equal to `empty`.
    RandomFill {
        keys: Vec<String>,
        empty: String,
        value: String,
    },
    If {
        cond: Cond,
        #[serde(default)]
        then: Vec<Effect>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        otherwise: Vec<Effect>,
    },
    Call {
        name: String,
    },
    Goto {
        screen: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementDef {
    pub role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hint_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tooltip: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub additional_actions: Vec<ActionTag>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub editable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Rect>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub state: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visible_if: Option<Cond>,
    /// Member of the screen's scrolling list.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub scrollable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenDef {
    pub id: String,
    pub elements: Vec<ElementDef>,
    /// Number of scrollable elements visible at once; `None` disables scrolling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scroll_window: Option<usize>,
}

/// `(screen, element role, action) -> (state mutation, next screen)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// Screen id or `"*"`.
    pub screen: String,
    /// Element role; a trailing `*` matches by prefix. Absent for screen-level
    /// actions (open_app, swipe, wait, go_back, answer).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
    pub action: ActionKind,
    /// App name for open_app, direction for swipe.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arg: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when: Option<Cond>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub effects: Vec<Effect>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goto: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskType {
    pub id: String,
    /// Instruction with `{name}` placeholders.
    pub template: String,
    pub variables: Vec<VarSpec>,
    #[serde(default = "default_step_cap")]
    pub step_cap: u32,
    pub initial_screen: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub initial_state: BTreeMap<String, String>,
    pub screens: Vec<ScreenDef>,
    pub transitions: Vec<Transition>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub conditions: BTreeMap<String, Cond>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub procedures: BTreeMap<String, Vec<Effect>>,
    pub reward: Cond,
}

/// One seeded concrete task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub task_type_id: String,
    pub seed: u64,
    pub instruction: String,
    pub bindings: BTreeMap<String, String>,
}

/// Expands `{...}` placeholders through `lookup`. `{{` and `}}` are literal braces.
pub fn render_template(
    template: &str,
    mut lookup: impl FnMut(&str) -> Option<String>,
) -> Result<String, EnvError> {
    let mut out = String::with_capacity(template.len());
    let mut chars = template.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                out.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                out.push('}');
            }
            '{' => {
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some(ch) => name.push(ch),
                        None => return Err(EnvError::Definition(format!("unclosed placeholder in {template:?}"))),
                    }
                }
                match lookup(name.trim()) {
                    Some(v) => out.push_str(&v),
                    None => return Err(EnvError::Definition(format!("unknown placeholder {{{name}}} in {template:?}"))),
                }
            }
            _ => out.push(c),
        }
    }
    Ok(out)
}

/// Placeholder names appearing in a template.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut names = Vec::new();
    let _ = render_template(template, |n| {
        names.push(n.to_string());
        Some(String::new())
    });
    names
}

/// Seed for a variable's RNG, independent of declaration order.
fn var_seed(task_id: &str, var: &str, seed: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(task_id.as_bytes());
    h.update([0u8]);
    h.update(var.as_bytes());
    h.update([0u8]);
    h.update(seed.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

impl TaskType {
    pub fn screen(&self, id: &str) -> Option<&ScreenDef> {
        self.screens.iter().find(|s| s.id == id)
    }

    /// Generates bindings and the instruction for `seed`.
    pub fn instantiate(&self, seed: u64) -> Result<TaskInstance, EnvError> {
        let mut bindings = BTreeMap::new();
        for var in &self.variables {
            let value = match &var.generator {
                Generator::Choice { values } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(var_seed(&self.id, &var.name, seed));
                    values[rng.random_range(0..values.len())].clone()
                }
                Generator::Cycle { values } => values[(seed % values.len() as u64) as usize].clone(),
                Generator::IntRange { min, max } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(var_seed(&self.id, &var.name, seed));
                    rng.random_range(*min..=*max).to_string()
                }
                Generator::Format { pattern } => render_template(pattern, |n| bindings.get(n).cloned())?,
            };
            bindings.insert(var.name.clone(), value);
        }
        let instruction = render_template(&self.template, |n| bindings.get(n).cloned())?;
        Ok(TaskInstance { task_type_id: self.id.clone(), seed, instruction, bindings })
    }

    /// Structural checks run at load time.
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::Definition(format!("task type {}: {msg}", self.id)));
        let names: BTreeSet<&str> = self.variables.iter().map(|v| v.name.as_str()).collect();
        for p in placeholders(&self.template) {
            if !names.contains(p.as_str()) {
                return bad(format!("template placeholder {{{p}}} has no variable"));
            }
        }
        for v in &self.variables {
            match &v.generator {
                Generator::Choice { values } | Generator::Cycle { values } if values.is_empty() => {
                    return bad(format!("variable {} has no values", v.name));
                }
                Generator::IntRange { min, max } if min > max => {
                    return bad(format!("variable {} has an empty range", v.name));
                }
                _ => {}
            }
        }
        if self.screen(&self.initial_screen).is_none() {
            return bad(format!("initial screen {} is not defined", self.initial_screen));
        }
        for s in &self.screens {
            let mut seen = BTreeSet::new();
            for e in &s.elements {
                if !seen.insert(e.role.as_str()) && e.visible_if.is_none() {
                    return bad(format!("screen {} repeats role {} without a visibility guard", s.id, e.role));
                }
                if let Some(c) = &e.visible_if {
                    self.check_cond(c)?;
                }
            }
        }
        for t in &self.transitions {
            if t.screen != "*" && self.screen(&t.screen).is_none() {
                return bad(format!("transition references unknown screen {}", t.screen));
            }
            if let Some(g) = &t.goto {
                if self.screen(g).is_none() {
                    return bad(format!("transition goes to unknown screen {g}"));
                }
            }
            if t.role.is_some() != t.action.needs_index() {
                return bad(format!("transition for {} must name a role iff the action targets an element", t.action.as_str()));
            }
            if let Some(c) = &t.when {
                self.check_cond(c)?;
            }
            self.check_effects(&t.effects)?;
        }
        for effects in self.procedures.values() {
            self.check_effects(effects)?;
        }
        for c in self.conditions.values() {
            self.check_cond(c)?;
        }
        self.check_cond(&self.reward)
    }

    fn check_cond(&self, c: &Cond) -> Result<(), EnvError> {
        match c {
            Cond::Ref(name) if !self.conditions.contains_key(name) => {
                Err(EnvError::Definition(format!("task type {}: unknown condition {name}", self.id)))
            }
            Cond::All(cs) | Cond::Any(cs) => cs.iter().try_for_each(|c| self.check_cond(c)),
            Cond::Not(c) => self.check_cond(c),
            _ => Ok(()),
        }
    }

    fn check_effects(&self, effects: &[Effect]) -> Result<(), EnvError> {
        for e in effects {
            match e {
                Effect::Call { name } if !self.procedures.contains_key(name) => {
                    return Err(EnvError::Definition(format!("task type {}: unknown procedure {name}", self.id)));
                }
                Effect::Goto { screen } if self.screen(screen).is_none() => {
                    return Err(EnvError::Definition(format!("task type {}: unknown screen {screen}", self.id)));
                }
                Effect::If { cond, then, otherwise } => {
                    self.check_cond(cond)?;
                    self.check_effects(then)?;
                    self.check_effects(otherwise)?;
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// The set of task types available to a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSet {
    types: Vec<TaskType>,
}

impl TaskSet {
    pub fn new(types: Vec<TaskType>) -> Result<Self, EnvError> {
        let mut ids = BTreeSet::new();
        for t in &types {
            t.validate()?;
            if !ids.insert(t.id.clone()) {
                return Err(EnvError::Definition(format!("duplicate task type {}", t.id)));
            }
        }
        Ok(TaskSet { types })
    }

    pub fn from_json(text: &str) -> Result<Self, EnvError> {
        let file: TaskFile = serde_json::from_str(text).map_err(|e| EnvError::Definition(e.to_string()))?;
        if file.schema != TASK_FILE_SCHEMA {
            return Err(EnvError::Definition(format!("unsupported task file schema {}", file.schema)));
        }
        Self::new(file.task_types)
    }

    pub fn to_json(&self) -> String {
        let file = TaskFile { schema: TASK_FILE_SCHEMA, task_types: self.types.clone() };
        let mut s = serde_json::to_string_pretty(&file).expect("task file serializes");
        s.push('\n');
        s
    }

    pub fn get(&self, id: &str) -> Result<&TaskType, EnvError> {
        self.types.iter().find(|t| t.id == id).ok_or_else(|| EnvError::NotFound(id.to_string()))
    }

    pub fn types(&self) -> &[TaskType] {
        &self.types
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.types.iter().map(|t| t.id.as_str())
    }
}
