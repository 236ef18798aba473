//! Observation and action types shared by the simulator, the matcher and the
//! interpreter.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Optional capabilities an element advertises beyond clicking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionTag {
    LongPress,
    InputText,
    Swipe,
}

impl ActionTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionTag::LongPress => "long_press",
            ActionTag::InputText => "input_text",
            ActionTag::Swipe => "swipe",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "long_press" => Some(ActionTag::LongPress),
            "input_text" => Some(ActionTag::InputText),
            "swipe" => Some(ActionTag::Swipe),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub left: i32,
    pub top: i32,
    pub right: i32,
    pub bottom: i32,
}

/// One widget on the current screen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hint_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tooltip: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub additional_actions: BTreeSet<ActionTag>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub editable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Rect>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub state: BTreeMap<String, String>,
}

impl Element {
    pub fn new(index: usize) -> Self {
        Element {
            index,
            text: None,
            hint_text: None,
            content_description: None,
            tooltip: None,
            additional_actions: BTreeSet::new(),
            editable: false,
            bounds: None,
            state: BTreeMap::new(),
        }
    }

    pub fn accepts_text(&self) -> bool {
        self.editable || self.additional_actions.contains(&ActionTag::InputText)
    }

    pub fn supports(&self, kind: ActionKind) -> bool {
        match kind {
            ActionKind::Click => true,
            ActionKind::LongPress => self.additional_actions.contains(&ActionTag::LongPress),
            ActionKind::InputText => self.accepts_text(),
            _ => false,
        }
    }

    /// Attribute dictionary with only the attributes that are present, in the
    /// shape returned by `env_op.get_cur_ui_element_list()`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("element serializes")
    }
}

/// What the agent sees after each step. Screenshots are never produced by the
/// simulator, so `screenshot_ref` stays `None`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub screen_id: String,
    pub elements: Vec<Element>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screenshot_ref: Option<String>,
}

impl Observation {
    pub fn empty(screen_id: impl Into<String>) -> Self {
        Observation { screen_id: screen_id.into(), elements: Vec::new(), screenshot_ref: None }
    }

    /// One line per element: `index: {attributes}`. This is the rendering used
    /// in every prompt.
    pub fn digest(&self) -> String {
        let mut out = String::new();
        for e in &self.elements {
            let mut v = e.to_json();
            if let Some(map) = v.as_object_mut() {
                map.remove("index");
            }
            out.push_str(&format!("{}: {}\n", e.index, v));
        }
        if out.is_empty() {
            out.push_str("(no elements)\n");
        }
        out
    }

    /// Content hash over the canonical JSON form.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("observation serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn element(&self, index: i64) -> Option<&Element> {
        if index < 0 {
            return None;
        }
        self.elements.get(index as usize)
    }

    /// True when indices are exactly `0..n`.
    pub fn indices_contiguous(&self) -> bool {
        self.elements.iter().enumerate().all(|(i, e)| e.index == i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Click,
    LongPress,
    InputText,
    Swipe,
    OpenApp,
    Wait,
    GoBack,
    Stop,
    Answer,
}

impl ActionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Click => "click",
            ActionKind::LongPress => "long_press",
            ActionKind::InputText => "input_text",
            ActionKind::Swipe => "swipe",
            ActionKind::OpenApp => "open_app",
            ActionKind::Wait => "wait",
            ActionKind::GoBack => "go_back",
            ActionKind::Stop => "stop",
            ActionKind::Answer => "answer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "click" => ActionKind::Click,
            "long_press" => ActionKind::LongPress,
            "input_text" => ActionKind::InputText,
            "swipe" => ActionKind::Swipe,
            "open_app" => ActionKind::OpenApp,
            "wait" => ActionKind::Wait,
            "go_back" => ActionKind::GoBack,
            "stop" => ActionKind::Stop,
            "answer" => ActionKind::Answer,
            _ => return None,
        })
    }

    pub fn needs_index(self) -> bool {
        matches!(self, ActionKind::Click | ActionKind::LongPress | ActionKind::InputText)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "up" => Some(Direction::Up),
            "down" => Some(Direction::Down),
            "left" => Some(Direction::Left),
            "right" => Some(Direction::Right),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopStatus {
    Complete,
    Infeasible,
}

impl StopStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            StopStatus::Complete => "complete",
            StopStatus::Infeasible => "infeasible",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "complete" => Some(StopStatus::Complete),
            "infeasible" => Some(StopStatus::Infeasible),
            _ => None,
        }
    }
}

/// A primitive action addressed by element index (the "hard-coded" form).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardAction {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_arg: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub app_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<StopStatus>,
}

impl HardAction {
    fn bare(kind: ActionKind) -> Self {
        HardAction { kind, index: None, text_arg: None, direction: None, app_name: None, status: None }
    }

    pub fn click(index: i64) -> Self {
        HardAction { index: Some(index), ..Self::bare(ActionKind::Click) }
    }

    pub fn long_press(index: i64) -> Self {
        HardAction { index: Some(index), ..Self::bare(ActionKind::LongPress) }
    }

    pub fn input_text(index: i64, text: impl Into<String>) -> Self {
        HardAction { index: Some(index), text_arg: Some(text.into()), ..Self::bare(ActionKind::InputText) }
    }

    pub fn swipe(direction: Direction) -> Self {
        HardAction { direction: Some(direction), ..Self::bare(ActionKind::Swipe) }
    }

    pub fn open_app(name: impl Into<String>) -> Self {
        HardAction { app_name: Some(name.into()), ..Self::bare(ActionKind::OpenApp) }
    }

    pub fn wait() -> Self {
        Self::bare(ActionKind::Wait)
    }

    pub fn go_back() -> Self {
        Self::bare(ActionKind::GoBack)
    }

    pub fn stop(status: StopStatus) -> Self {
        HardAction { status: Some(status), ..Self::bare(ActionKind::Stop) }
    }

    pub fn answer(text: impl Into<String>) -> Self {
        HardAction { text_arg: Some(text.into()), ..Self::bare(ActionKind::Answer) }
    }

    /// Checks the field-presence rules for each action kind.
    pub fn well_formed(&self) -> Result<(), String> {
        if self.kind.needs_index() != self.index.is_some() {
            return Err(format!("{}: index must be present iff the action targets an element", self.kind.as_str()));
        }
        if (self.kind == ActionKind::Stop) != self.status.is_some() {
            return Err("status must be present iff kind is stop".into());
        }
        match self.kind {
            ActionKind::InputText | ActionKind::Answer if self.text_arg.is_none() => {
                Err(format!("{} requires a text argument", self.kind.as_str()))
            }
            ActionKind::Swipe if self.direction.is_none() => Err("swipe requires a direction".into()),
            ActionKind::OpenApp if self.app_name.is_none() => Err("open_app requires an app name".into()),
            _ => Ok(()),
        }
    }
}

fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

impl fmt::Display for HardAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = self.kind.as_str();
        match self.kind {
            ActionKind::Click | ActionKind::LongPress => {
                write!(f, "env_op.{}({})", name, self.index.unwrap_or(-1))
            }
            ActionKind::InputText => write!(
                f,
                "env_op.input_text({}, {})",
                self.index.unwrap_or(-1),
                quote(self.text_arg.as_deref().unwrap_or(""))
            ),
            ActionKind::Swipe => {
                write!(f, "env_op.swipe({})", quote(self.direction.map(Direction::as_str).unwrap_or("up")))
            }
            ActionKind::OpenApp => write!(f, "env_op.open_app({})", quote(self.app_name.as_deref().unwrap_or(""))),
            ActionKind::Wait | ActionKind::GoBack => write!(f, "env_op.{}()", name),
            ActionKind::Stop => {
                write!(f, "env_op.stop({})", quote(self.status.map(StopStatus::as_str).unwrap_or("complete")))
            }
            ActionKind::Answer => write!(f, "env_op.answer({})", quote(self.text_arg.as_deref().unwrap_or(""))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn well_formedness_rules() {
        assert!(HardAction::click(2).well_formed().is_ok());
        assert!(HardAction::stop(StopStatus::Complete).well_formed().is_ok());
        let mut bad = HardAction::wait();
        bad.index = Some(1);
        assert!(bad.well_formed().is_err());
        let mut stop = HardAction::stop(StopStatus::Complete);
        stop.status = None;
        assert!(stop.well_formed().is_err());
    }

    #[test]
    fn display_matches_call_syntax() {
        assert_eq!(HardAction::click(3).to_string(), "env_op.click(3)");
        assert_eq!(HardAction::input_text(1, "a\"b").to_string(), "env_op.input_text(1, \"a\\\"b\")");
        assert_eq!(HardAction::swipe(Direction::Up).to_string(), "env_op.swipe(\"up\")");
    }

    #[test]
    fn digest_omits_absent_attributes() {
        let mut e = Element::new(0);
        e.text = Some("OK".into());
        let obs = Observation { screen_id: "s".into(), elements: vec![e], screenshot_ref: None };
        assert_eq!(obs.digest(), "0: {\"text\":\"OK\"}\n");
    }
}
