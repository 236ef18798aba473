//! `find_element`: attribute filtering over the current element list, with a
//! grounding model consulted only when more than one element survives.

use std::collections::BTreeSet;

use serde_json::{Map, Value};
use thiserror::Error;

use crate::env::{ActionTag, Element, Observation};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatchError {
    #[error("invalid find_element spec: {0}")]
    InvalidSpec(String),
    #[error("grounding unavailable: {0}")]
    GroundingUnavailable(String),
}

pub const SPEC_KEYS: [&str; 7] =
    ["text", "hint_text", "content_description", "tooltip", "additional_actions", "editable", "target_description"];

/// Attribute constraints for one lookup. Absent fields impose no constraint.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchSpec {
    pub text: Option<String>,
    pub hint_text: Option<String>,
    pub content_description: Option<String>,
    pub tooltip: Option<String>,
    pub additional_actions: Option<BTreeSet<ActionTag>>,
    pub editable: Option<bool>,
    pub target_description: String,
}

impl MatchSpec {
    pub fn new(target_description: impl Into<String>) -> Self {
        MatchSpec { target_description: target_description.into(), ..Default::default() }
    }

    /// Builds a spec from a `kwargs`-style object, rejecting unknown keys and
    /// wrongly typed values.
    pub fn from_json(v: &Value) -> Result<Self, MatchError> {
        let obj = v.as_object().ok_or_else(|| MatchError::InvalidSpec("kwargs must be a dict".into()))?;
        Self::from_map(obj)
    }

    pub fn from_map(obj: &Map<String, Value>) -> Result<Self, MatchError> {
        let mut spec = MatchSpec::default();
        let mut has_target = false;
        for (k, v) in obj {
            let string = || {
                v.as_str().map(str::to_string).ok_or_else(|| MatchError::InvalidSpec(format!("{k} must be a string")))
            };
            match k.as_str() {
                "text" => spec.text = Some(string()?),
                "hint_text" => spec.hint_text = Some(string()?),
                "content_description" => spec.content_description = Some(string()?),
                "tooltip" => spec.tooltip = Some(string()?),
                "target_description" => {
                    spec.target_description = string()?;
                    has_target = true;
                }
                "editable" => {
                    spec.editable =
                        Some(v.as_bool().ok_or_else(|| MatchError::InvalidSpec("editable must be a bool".into()))?)
                }
                "additional_actions" => {
                    let items =
                        v.as_array().ok_or_else(|| MatchError::InvalidSpec("additional_actions must be a list".into()))?;
                    let mut set = BTreeSet::new();
                    for item in items {
                        let tag = item
                            .as_str()
                            .and_then(ActionTag::parse)
                            .ok_or_else(|| MatchError::InvalidSpec(format!("unknown action tag {item}")))?;
                        set.insert(tag);
                    }
                    spec.additional_actions = Some(set);
                }
                other => return Err(MatchError::InvalidSpec(format!("unknown key {other}"))),
            }
        }
        if !has_target {
            return Err(MatchError::InvalidSpec("target_description is required".into()));
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), MatchError> {
        if self.target_description.trim().is_empty() {
            return Err(MatchError::InvalidSpec("target_description is empty".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        let mut put = |k: &str, v: &Option<String>| {
            if let Some(v) = v {
                m.insert(k.into(), Value::String(v.clone()));
            }
        };
        put("text", &self.text);
        put("hint_text", &self.hint_text);
        put("content_description", &self.content_description);
        put("tooltip", &self.tooltip);
        if let Some(a) = &self.additional_actions {
            m.insert("additional_actions".into(), a.iter().map(|t| Value::String(t.as_str().into())).collect());
        }
        if let Some(e) = self.editable {
            m.insert("editable".into(), Value::Bool(e));
        }
        m.insert("target_description".into(), Value::String(self.target_description.clone()));
        Value::Object(m)
    }

    pub fn matches(&self, e: &Element, cfg: &MatcherConfig) -> bool {
        let eq = |want: &Option<String>, have: &Option<String>| match want {
            None => true,
            Some(w) => match have {
                None => false,
                Some(h) if cfg.case_insensitive => w.to_lowercase() == h.to_lowercase(),
                Some(h) => w == h,
            },
        };
        eq(&self.text, &e.text)
            && eq(&self.hint_text, &e.hint_text)
            && eq(&self.content_description, &e.content_description)
            && eq(&self.tooltip, &e.tooltip)
            && self.additional_actions.as_ref().is_none_or(|a| a.is_subset(&e.additional_actions))
            && self.editable.is_none_or(|want| want == e.editable)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MatcherConfig {
    pub case_insensitive: bool,
}

/// A model that picks one element among several candidates.
pub trait Grounder {
    /// Returns the raw model response to `prompt`.
    fn ground(&mut self, prompt: &str) -> Result<String, MatchError>;
}

impl<G: Grounder + ?Sized> Grounder for &mut G {
    fn ground(&mut self, prompt: &str) -> Result<String, MatchError> {
        (**self).ground(prompt)
    }
}

/// Grounder for contexts where no model is configured.
#[derive(Debug, Default)]
pub struct NoGrounder;

impl Grounder for NoGrounder {
    fn ground(&mut self, _prompt: &str) -> Result<String, MatchError> {
        Err(MatchError::GroundingUnavailable("no grounder configured".into()))
    }
}

/// Indices of every element satisfying all present constraints, in screen order.
pub fn candidates(spec: &MatchSpec, obs: &Observation, cfg: &MatcherConfig) -> Result<Vec<i64>, MatchError> {
    spec.validate()?;
    Ok(obs.elements.iter().filter(|e| spec.matches(e, cfg)).map(|e| e.index as i64).collect())
}

/// Prompt shown to the grounder: candidate digests plus the target description.
pub fn grounding_prompt(spec: &MatchSpec, obs: &Observation, cands: &[i64]) -> String {
    let mut s = String::from("Several UI elements match the search attributes. Pick the one that fits the description.\n\n");
    s.push_str("Candidates:\n");
    for &i in cands {
        let e = obs.element(i).expect("candidate exists");
        let mut j = e.to_json();
        if let Some(o) = j.as_object_mut() {
            o.remove("index");
        }
        s.push_str(&format!("{i}: {j}\n"));
    }
    s.push_str(&format!("\nTarget description: {}\n\n", spec.target_description));
    s.push_str("Reply with the candidate's index only, as a bare integer.");
    s
}

fn parse_choice(response: &str, cands: &[i64]) -> Option<i64> {
    let n: i64 = response.trim().parse().ok()?;
    cands.contains(&n).then_some(n)
}

/// Resolves `spec` to one element index, or −1 when nothing matches.
pub fn find_element(
    spec: &MatchSpec,
    obs: &Observation,
    grounder: &mut dyn Grounder,
    cfg: &MatcherConfig,
) -> Result<i64, MatchError> {
    let cands = candidates(spec, obs, cfg)?;
    match cands.len() {
        0 => Ok(-1),
        1 => Ok(cands[0]),
        _ => {
            let prompt = grounding_prompt(spec, obs, &cands);
            let mut last = String::new();
            for _ in 0..2 {
                last = grounder.ground(&prompt)?;
                if let Some(i) = parse_choice(&last, &cands) {
                    return Ok(i);
                }
            }
            Err(MatchError::GroundingUnavailable(format!("grounder gave no valid candidate index: {:?}", last.trim())))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn el(index: usize, text: Option<&str>) -> Element {
        let mut e = Element::new(index);
        e.text = text.map(str::to_string);
        e
    }

    struct Scripted {
        replies: Vec<&'static str>,
        prompts: Vec<String>,
    }

    impl Grounder for Scripted {
        fn ground(&mut self, prompt: &str) -> Result<String, MatchError> {
            self.prompts.push(prompt.to_string());
            if self.replies.is_empty() {
                return Err(MatchError::GroundingUnavailable("exhausted".into()));
            }
            Ok(self.replies.remove(0).to_string())
        }
    }

    fn scripted(replies: Vec<&'static str>) -> Scripted {
        Scripted { replies, prompts: Vec::new() }
    }

    fn obs(elements: Vec<Element>) -> Observation {
        Observation { screen_id: "s".into(), elements, screenshot_ref: None }
    }

    #[test]
    fn unique_text_match_skips_grounder() {
        let o = obs(vec![el(0, Some("Cancel")), el(1, Some("OK"))]);
        let spec = MatchSpec { text: Some("OK".into()), ..MatchSpec::new("confirm button") };
        let mut g = scripted(vec![]);
        assert_eq!(find_element(&spec, &o, &mut g, &MatcherConfig::default()).unwrap(), 1);
        assert!(g.prompts.is_empty());
    }

    #[test]
    fn missing_text_gives_minus_one() {
        let o = obs(vec![el(0, Some("Cancel")), el(1, Some("OK"))]);
        let spec = MatchSpec { text: Some("missing".into()), ..MatchSpec::new("x") };
        assert_eq!(find_element(&spec, &o, &mut NoGrounder, &MatcherConfig::default()).unwrap(), -1);
    }

    #[test]
    fn ambiguous_match_uses_grounder_choice() {
        let mut a = el(0, None);
        a.editable = true;
        a.hint_text = Some("Full name".into());
        let mut b = el(1, None);
        b.editable = true;
        b.hint_text = Some("Email address".into());
        let o = obs(vec![a, b, el(2, Some("Submit"))]);
        let spec = MatchSpec { editable: Some(true), ..MatchSpec::new("email input field") };
        let mut g = scripted(vec!["1"]);
        assert_eq!(find_element(&spec, &o, &mut g, &MatcherConfig::default()).unwrap(), 1);
        assert_eq!(g.prompts.len(), 1);
        assert!(g.prompts[0].contains("Target description: email input field"));
        assert!(g.prompts[0].contains("0: {"));
        assert!(!g.prompts[0].contains("2: {"));
    }

    #[test]
    fn bad_grounder_reply_is_retried_once() {
        let o = obs(vec![el(0, Some("A")), el(1, Some("A"))]);
        let spec = MatchSpec { text: Some("A".into()), ..MatchSpec::new("second") };
        let mut g = scripted(vec!["the second one", "1"]);
        assert_eq!(find_element(&spec, &o, &mut g, &MatcherConfig::default()).unwrap(), 1);
        let mut g = scripted(vec!["x", "7"]);
        assert!(matches!(
            find_element(&spec, &o, &mut g, &MatcherConfig::default()),
            Err(MatchError::GroundingUnavailable(_))
        ));
        assert_eq!(g.prompts.len(), 2);
    }

    #[test]
    fn additional_actions_match_by_subset() {
        let mut a = el(0, None);
        a.additional_actions = [ActionTag::LongPress, ActionTag::InputText].into();
        let mut b = el(1, None);
        b.additional_actions = [ActionTag::LongPress].into();
        let o = obs(vec![a, b, el(2, None)]);
        let spec = MatchSpec { additional_actions: Some([ActionTag::InputText].into()), ..MatchSpec::new("t") };
        assert_eq!(candidates(&spec, &o, &MatcherConfig::default()).unwrap(), vec![0]);
        let spec = MatchSpec { additional_actions: Some([ActionTag::LongPress].into()), ..MatchSpec::new("t") };
        assert_eq!(candidates(&spec, &o, &MatcherConfig::default()).unwrap(), vec![0, 1]);
    }

    #[test]
    fn description_only_spec_keeps_everything() {
        let o = obs(vec![el(0, Some("a")), el(1, None), el(2, Some("b"))]);
        assert_eq!(candidates(&MatchSpec::new("t"), &o, &MatcherConfig::default()).unwrap(), vec![0, 1, 2]);
        assert!(candidates(&MatchSpec::new("t"), &obs(vec![]), &MatcherConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn case_sensitivity_is_configurable() {
        let o = obs(vec![el(0, Some("OK"))]);
        let spec = MatchSpec { text: Some("ok".into()), ..MatchSpec::new("t") };
        assert!(candidates(&spec, &o, &MatcherConfig::default()).unwrap().is_empty());
        assert_eq!(candidates(&spec, &o, &MatcherConfig { case_insensitive: true }).unwrap(), vec![0]);
    }

    #[test]
    fn spec_parsing_rejects_bad_input() {
        let ok = json!({"text": "OK", "additional_actions": ["input_text"], "target_description": "d"});
        let spec = MatchSpec::from_json(&ok).unwrap();
        assert_eq!(MatchSpec::from_json(&spec.to_json()).unwrap(), spec);
        for bad in [
            json!({"text": "OK"}),
            json!({"text": "OK", "target_description": "  "}),
            json!({"colour": "red", "target_description": "d"}),
            json!({"editable": "yes", "target_description": "d"}),
            json!({"additional_actions": ["fly"], "target_description": "d"}),
            json!(["text"]),
        ] {
            assert!(matches!(MatchSpec::from_json(&bad), Err(MatchError::InvalidSpec(_))), "{bad}");
        }
    }
}
