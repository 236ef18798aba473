//! Deterministic simulated GUI environment.
//!
//! A [`GuiEnv`] runs one episode of one [`TaskType`] instantiated from a seed.
//! Screens, transitions and rewards come from the declarative task definition;
//! the simulator itself has no task-specific code.

mod taskdef;
pub mod types;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use taskdef::{
    placeholders, render_template, Cond, Effect, ElementDef, Generator, ScreenDef, TaskFile, TaskInstance, TaskSet,
    TaskType, Transition, VarSpec, DEFAULT_STEP_CAP, TASK_FILE_SCHEMA,
};
pub use types::{ActionKind, ActionTag, Direction, Element, HardAction, Observation, Rect, StopStatus};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("unknown task type {0}")]
    NotFound(String),
    #[error("invalid index {index}: screen has {len} elements")]
    InvalidIndex { index: i64, len: usize },
    #[error("element {index} does not support {action}")]
    UnsupportedAction { action: &'static str, index: i64 },
    #[error("episode is already over")]
    EpisodeOver,
    #[error("episode has not terminated")]
    NotTerminal,
    #[error("malformed action: {0}")]
    Malformed(String),
    #[error("task definition error: {0}")]
    Definition(String),
}

const MAX_EFFECT_DEPTH: usize = 16;

/// Template lookup context for one evaluation.
struct Ctx<'a> {
    bindings: &'a BTreeMap<String, String>,
    state: &'a BTreeMap<String, String>,
    elem: Option<&'a BTreeMap<String, String>>,
    input: Option<&'a str>,
    answer: Option<&'a str>,
    status: Option<StopStatus>,
    screen: &'a str,
}

impl Ctx<'_> {
    fn lookup(&self, name: &str) -> Option<String> {
        if let Some(k) = name.strip_prefix("var.") {
            return self.bindings.get(k).cloned();
        }
        if let Some(k) = name.strip_prefix("state.") {
            return Some(self.state.get(k).cloned().unwrap_or_default());
        }
        if let Some(k) = name.strip_prefix("elem.") {
            return self.elem.map(|m| m.get(k).cloned().unwrap_or_default());
        }
        match name {
            "input" => Some(self.input.unwrap_or("").to_string()),
            "answer" => Some(self.answer.unwrap_or("").to_string()),
            "status" => Some(self.status.map(|s| s.as_str().to_string()).unwrap_or_default()),
            "screen" => Some(self.screen.to_string()),
            _ => None,
        }
    }

    fn render(&self, t: &str) -> Result<String, EnvError> {
        render_template(t, |n| self.lookup(n))
    }
}

fn eval_cond(task: &TaskType, c: &Cond, ctx: &Ctx<'_>, depth: usize) -> Result<bool, EnvError> {
    if depth > MAX_EFFECT_DEPTH {
        return Err(EnvError::Definition("condition nesting too deep".into()));
    }
    Ok(match c {
        Cond::Always => true,
        Cond::Eq(a, b) => ctx.render(a)? == ctx.render(b)?,
        Cond::Ne(a, b) => ctx.render(a)? != ctx.render(b)?,
        Cond::EndsWith(a, b) => ctx.render(a)?.ends_with(&ctx.render(b)?),
        Cond::Contains(a, b) => ctx.render(a)?.contains(&ctx.render(b)?),
        Cond::AllEq { keys, value } => {
            let v = ctx.render(value)?;
            keys.iter().all(|k| ctx.state.get(k).map(String::as_str).unwrap_or("") == v)
        }
        Cond::All(cs) => {
            for c in cs {
                if !eval_cond(task, c, ctx, depth + 1)? {
                    return Ok(false);
                }
            }
            true
        }
        Cond::Any(cs) => {
            for c in cs {
                if eval_cond(task, c, ctx, depth + 1)? {
                    return Ok(true);
                }
            }
            false
        }
        Cond::Not(c) => !eval_cond(task, c, ctx, depth + 1)?,
        Cond::Ref(name) => {
            let c = task.conditions.get(name).ok_or_else(|| EnvError::Definition(format!("unknown condition {name}")))?;
            eval_cond(task, c, ctx, depth + 1)?
        }
    })
}

/// One episode of a task instance.
#[derive(Debug, Clone)]
pub struct GuiEnv {
    task: Arc<TaskType>,
    instance: TaskInstance,
    screen: String,
    state: BTreeMap<String, String>,
    steps: u32,
    step_cap: u32,
    terminal: bool,
    status: Option<StopStatus>,
    answer: Option<String>,
    obs: Observation,
    /// Element index -> (element definition position, rendered element state).
    visible: Vec<(usize, BTreeMap<String, String>)>,
}

impl GuiEnv {
    /// Looks up `task_type_id` and starts an episode for `seed`.
    pub fn instantiate(tasks: &TaskSet, task_type_id: &str, seed: u64) -> Result<Self, EnvError> {
        let task = tasks.get(task_type_id)?;
        Self::new(Arc::new(task.clone()), seed)
    }

    pub fn new(task: Arc<TaskType>, seed: u64) -> Result<Self, EnvError> {
        let instance = task.instantiate(seed)?;
        let mut env = GuiEnv {
            screen: task.initial_screen.clone(),
            step_cap: task.step_cap,
            task,
            instance,
            state: BTreeMap::new(),
            steps: 0,
            terminal: false,
            status: None,
            answer: None,
            obs: Observation::empty(""),
            visible: Vec::new(),
        };
        env.reset_state()?;
        Ok(env)
    }

    fn reset_state(&mut self) -> Result<(), EnvError> {
        let mut state = BTreeMap::new();
        for (k, v) in &self.task.initial_state {
            let ctx = Ctx {
                bindings: &self.instance.bindings,
                state: &state,
                elem: None,
                input: None,
                answer: None,
                status: None,
                screen: &self.task.initial_screen,
            };
            let value = ctx.render(v)?;
            state.insert(k.clone(), value);
        }
        self.state = state;
        self.screen = self.task.initial_screen.clone();
        self.steps = 0;
        self.terminal = false;
        self.status = None;
        self.answer = None;
        self.render()
    }

    /// Restarts the same instance from its initial state.
    pub fn reset(&mut self) -> Result<(), EnvError> {
        self.reset_state()
    }

    pub fn task_type(&self) -> &TaskType {
        &self.task
    }

    pub fn instance(&self) -> &TaskInstance {
        &self.instance
    }

    pub fn observe(&self) -> &Observation {
        &self.obs
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn steps_taken(&self) -> u32 {
        self.steps
    }

    pub fn step_cap(&self) -> u32 {
        self.step_cap
    }

    pub fn set_step_cap(&mut self, cap: u32) {
        self.step_cap = cap;
    }

    pub fn status(&self) -> Option<StopStatus> {
        self.status
    }

    pub fn answer(&self) -> Option<&str> {
        self.answer.as_deref()
    }

    /// Raw state value, for tests and diagnostics.
    pub fn state_value(&self, key: &str) -> Option<&str> {
        self.state.get(key).map(String::as_str)
    }

    /// Ends the episode without a stop action (the reward rule then sees an
    /// empty status).
    pub fn finish(&mut self) {
        self.terminal = true;
    }

    fn ctx<'a>(&'a self, elem: Option<&'a BTreeMap<String, String>>, input: Option<&'a str>) -> Ctx<'a> {
        Ctx {
            bindings: &self.instance.bindings,
            state: &self.state,
            elem,
            input,
            answer: self.answer.as_deref(),
            status: self.status,
            screen: &self.screen,
        }
    }

    fn scroll_key(&self) -> String {
        format!("scroll.{}", self.screen)
    }

    fn render(&mut self) -> Result<(), EnvError> {
        let screen = self
            .task
            .screen(&self.screen)
            .ok_or_else(|| EnvError::Definition(format!("unknown screen {}", self.screen)))?;
        let offset: usize = self.state.get(&self.scroll_key()).and_then(|v| v.parse().ok()).unwrap_or(0);
        let mut elements = Vec::new();
        let mut visible = Vec::new();
        let mut scroll_pos = 0usize;
        for (def_idx, def) in screen.elements.iter().enumerate() {
            let ctx = self.ctx(None, None);
            if let Some(c) = &def.visible_if {
                if !eval_cond(&self.task, c, &ctx, 0)? {
                    continue;
                }
            }
            if def.scrollable {
                let pos = scroll_pos;
                scroll_pos += 1;
                if let Some(window) = screen.scroll_window {
                    if pos < offset || pos >= offset + window {
                        continue;
                    }
                }
            }
            let opt = |t: &Option<String>| -> Result<Option<String>, EnvError> {
                match t {
                    Some(t) => {
                        let v = ctx.render(t)?;
                        Ok((!v.is_empty()).then_some(v))
                    }
                    None => Ok(None),
                }
            };
            let mut e = Element::new(elements.len());
            e.text = opt(&def.text)?;
            e.hint_text = opt(&def.hint_text)?;
            e.content_description = opt(&def.content_description)?;
            e.tooltip = opt(&def.tooltip)?;
            e.additional_actions = def.additional_actions.iter().copied().collect();
            e.editable = def.editable;
            e.bounds = def.bounds;
            for (k, v) in &def.state {
                e.state.insert(k.clone(), ctx.render(v)?);
            }
            visible.push((def_idx, e.state.clone()));
            elements.push(e);
        }
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&elements).expect("elements serialize"));
        let screen_id = format!("{}/{}", self.screen, &hex::encode(hasher.finalize())[..10]);
        self.obs = Observation { screen_id, elements, screenshot_ref: None };
        self.visible = visible;
        Ok(())
    }

    fn rng_for_step(&self) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.task.id.as_bytes());
        h.update(self.instance.seed.to_le_bytes());
        h.update(self.steps.to_le_bytes());
        let d = h.finalize();
        ChaCha8Rng::seed_from_u64(u64::from_le_bytes(d[..8].try_into().expect("8 bytes")))
    }

    fn apply_effects(
        &mut self,
        effects: &[Effect],
        elem: Option<&BTreeMap<String, String>>,
        input: Option<&str>,
        rng: &mut ChaCha8Rng,
        depth: usize,
    ) -> Result<(), EnvError> {
        if depth > MAX_EFFECT_DEPTH {
            return Err(EnvError::Definition("procedure nesting too deep".into()));
        }
        for effect in effects {
            match effect {
                Effect::Set { key, value } => {
                    let ctx = self.ctx(elem, input);
                    let k = ctx.render(key)?;
                    let v = ctx.render(value)?;
                    self.state.insert(k, v);
                }
                Effect::RandomFill { keys, empty, value } => {
                    let ctx = self.ctx(elem, input);
                    let empty = ctx.render(empty)?;
                    let value = ctx.render(value)?;
                    let open: Vec<&String> =
                        keys.iter().filter(|k| self.state.get(*k).map(String::as_str).unwrap_or("") == empty).collect();
                    if !open.is_empty() {
                        let pick = open[rng.random_range(0..open.len())].clone();
                        self.state.insert(pick, value);
                    }
                }
                Effect::If { cond, then, otherwise } => {
                    let hit = eval_cond(&self.task, cond, &self.ctx(elem, input), 0)?;
                    let branch = if hit { then } else { otherwise };
                    self.apply_effects(branch, elem, input, rng, depth + 1)?;
                }
                Effect::Call { name } => {
                    let task = Arc::clone(&self.task);
                    let body = task
                        .procedures
                        .get(name)
                        .ok_or_else(|| EnvError::Definition(format!("unknown procedure {name}")))?;
                    self.apply_effects(body, elem, input, rng, depth + 1)?;
                }
                Effect::Goto { screen } => self.screen = screen.clone(),
            }
        }
        Ok(())
    }

    fn find_transition(
        &self,
        action: &HardAction,
        role: Option<&str>,
        elem: Option<&BTreeMap<String, String>>,
    ) -> Result<Option<Transition>, EnvError> {
        let arg = match action.kind {
            ActionKind::OpenApp => action.app_name.clone(),
            ActionKind::Swipe => action.direction.map(|d| d.as_str().to_string()),
            _ => None,
        };
        let ctx = self.ctx(elem, action.text_arg.as_deref());
        for t in &self.task.transitions {
            if t.action != action.kind || (t.screen != "*" && t.screen != self.screen) {
                continue;
            }
            match (&t.role, role) {
                (Some(pattern), Some(r)) => {
                    let hit = match pattern.strip_suffix('*') {
                        Some(prefix) => r.starts_with(prefix),
                        None => pattern == r,
                    };
                    if !hit {
                        continue;
                    }
                }
                (None, None) => {}
                _ => continue,
            }
            if let Some(want) = &t.arg {
                if arg.as_deref() != Some(want.as_str()) {
                    continue;
                }
            }
            if let Some(c) = &t.when {
                if !eval_cond(&self.task, c, &ctx, 0)? {
                    continue;
                }
            }
            return Ok(Some(t.clone()));
        }
        Ok(None)
    }

    /// Executes one action and returns the new observation.
    pub fn step(&mut self, action: &HardAction) -> Result<Observation, EnvError> {
        if self.terminal {
            return Err(EnvError::EpisodeOver);
        }
        action.well_formed().map_err(EnvError::Malformed)?;
        let mut role = None;
        let mut elem_state = None;
        if let Some(index) = action.index {
            let element = self
                .obs
                .element(index)
                .ok_or(EnvError::InvalidIndex { index, len: self.obs.elements.len() })?;
            if !element.supports(action.kind) {
                return Err(EnvError::UnsupportedAction { action: action.kind.as_str(), index });
            }
            let (def_idx, st) = &self.visible[index as usize];
            let screen = self.task.screen(&self.screen).expect("current screen exists");
            role = Some(screen.elements[*def_idx].role.clone());
            elem_state = Some(st.clone());
        }

        let mut rng = self.rng_for_step();
        let transition = self.find_transition(action, role.as_deref(), elem_state.as_ref())?;
        match &transition {
            Some(t) => {
                self.apply_effects(&t.effects, elem_state.as_ref(), action.text_arg.as_deref(), &mut rng, 0)?;
                if let Some(g) = &t.goto {
                    self.screen = g.clone();
                }
            }
            None => {
                if action.kind == ActionKind::Swipe {
                    self.default_scroll(action.direction.expect("swipe has direction"));
                }
            }
        }
        match action.kind {
            ActionKind::Stop => {
                self.terminal = true;
                self.status = action.status;
            }
            ActionKind::Answer => self.answer = action.text_arg.clone(),
            _ => {}
        }
        self.steps += 1;
        if !self.terminal && self.steps >= self.step_cap {
            self.terminal = true;
        }
        self.render()?;
        Ok(self.obs.clone())
    }

    fn default_scroll(&mut self, dir: Direction) {
        let Some(screen) = self.task.screen(&self.screen) else { return };
        let Some(window) = screen.scroll_window else { return };
        let total = screen.elements.iter().filter(|e| e.scrollable).count();
        let max_offset = total.saturating_sub(window);
        let key = self.scroll_key();
        let cur: usize = self.state.get(&key).and_then(|v| v.parse().ok()).unwrap_or(0);
        let next = match dir {
            Direction::Up => (cur + window).min(max_offset),
            Direction::Down => cur.saturating_sub(window),
            _ => cur,
        };
        self.state.insert(key, next.to_string());
    }

    /// Binary end-of-episode reward. A step-capped episode always scores 0.
    pub fn reward(&self) -> Result<u8, EnvError> {
        if !self.terminal {
            return Err(EnvError::NotTerminal);
        }
        if self.status.is_none() && self.steps >= self.step_cap {
            return Ok(0);
        }
        let ok = eval_cond(&self.task, &self.task.reward, &self.ctx(None, None), 0)?;
        Ok(ok as u8)
    }
}

#[cfg(test)]
mod tests;
