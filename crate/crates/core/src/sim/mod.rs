//! Rule-based stand-in for the language model.
//!
//! [`Author`] answers every agent role by reading the same prompts a hosted
//! model would get: it recovers the task from the instruction, reads the
//! screen from the digest and replies in the required section format. The
//! bundled fixtures were recorded from it.

mod policy;

use std::collections::{BTreeMap, BTreeSet};

use crate::agents::{action_from_code, is_reask};
use crate::bundled;
use crate::dsl::parse;
use crate::env::{placeholders, ActionKind, Element, HardAction, TaskSet};
use crate::llm::{AgentTag, ChatRequest, Responder, Role, SimulatedBackend};

/// Behaviour variants used to build adversarial fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Profile {
    Default,
    /// Every generated function looks for a banner that never appears.
    BrokenBuilder,
    /// The step agent gives up on the first screen.
    FailingReact,
}

impl Profile {
    pub const ALL: [Profile; 3] = [Profile::Default, Profile::BrokenBuilder, Profile::FailingReact];

    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Default => "default",
            Profile::BrokenBuilder => "broken-builder",
            Profile::FailingReact => "failing-react",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.as_str() == s)
    }
}

pub struct Author {
    tasks: TaskSet,
    profile: Profile,
}

impl Author {
    pub fn new(tasks: TaskSet, profile: Profile) -> Self {
        Author { tasks, profile }
    }

    fn identify(&self, instruction: &str) -> Option<(String, BTreeMap<String, String>)> {
        self.tasks.types().iter().find_map(|t| match_template(&t.template, instruction.trim()).map(|b| (t.id.clone(), b)))
    }

    fn task_for_template(&self, template: &str) -> Option<String> {
        self.tasks.types().iter().find(|t| t.template == template.trim()).map(|t| t.id.clone())
    }
}

/// A simulated backend answering with an [`Author`].
pub fn backend(tasks: TaskSet, profile: Profile) -> SimulatedBackend {
    SimulatedBackend::new(Box::new(Author::new(tasks, profile)))
}

impl Responder for Author {
    fn respond(&mut self, req: &ChatRequest) -> String {
        match req.agent_tag {
            AgentTag::React => self.react(req),
            AgentTag::Summarizer => summarize(first_user(req)),
            AgentTag::Concluder => conclude(first_user(req)),
            AgentTag::Translator => translate(first_user(req)),
            AgentTag::Builder => self.build(req),
            AgentTag::Analyzer => analyze(first_user(req)),
            AgentTag::Executor => self.execute(req),
            AgentTag::Grounder => ground(first_user(req)),
            AgentTag::Mllm => look(first_user(req)),
        }
    }
}

fn first_user(req: &ChatRequest) -> &str {
    req.messages.iter().find(|m| m.role == Role::User).map(|m| m.content.as_str()).unwrap_or("")
}

/// Splits a prompt into `[Name]` blocks.
fn blocks(text: &str) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut cur: Option<(String, String)> = None;
    let mut in_fence = false;
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            in_fence = !in_fence;
        }
        let heading = !in_fence
            && line.starts_with('[')
            && line.ends_with(']')
            && line[1..line.len() - 1].chars().all(|c| c.is_ascii_alphabetic() || c == ' ');
        if heading {
            if let Some((k, v)) = cur.take() {
                out.insert(k, v.trim_end().to_string());
            }
            cur = Some((line[1..line.len() - 1].to_string(), String::new()));
        } else if let Some((_, v)) = cur.as_mut() {
            v.push_str(line);
            v.push('\n');
        }
    }
    if let Some((k, v)) = cur {
        out.insert(k, v.trim_end().to_string());
    }
    out
}

fn get<'a>(b: &'a BTreeMap<String, String>, k: &str) -> &'a str {
    b.get(k).map(String::as_str).unwrap_or("")
}

/// Reads `index: {json}` digest lines back into elements.
fn parse_screen(digest: &str) -> Vec<Element> {
    let mut out = Vec::new();
    for line in digest.lines() {
        let Some((n, json)) = line.split_once(": ") else { continue };
        let Ok(index) = n.trim().parse::<usize>() else { continue };
        let Ok(mut v) = serde_json::from_str::<serde_json::Value>(json) else { continue };
        if let Some(o) = v.as_object_mut() {
            o.insert("index".into(), index.into());
        }
        if let Ok(e) = serde_json::from_value::<Element>(v) {
            out.push(e);
        }
    }
    out
}

/// Recovers placeholder values by matching the literal parts of `template`.
pub fn match_template(template: &str, text: &str) -> Option<BTreeMap<String, String>> {
    let names = placeholders(template);
    let mut literals = Vec::new();
    let mut rest = template;
    for n in &names {
        let marker = format!("{{{n}}}");
        let (lit, after) = rest.split_once(&marker)?;
        literals.push(lit);
        rest = after;
    }
    literals.push(rest);
    if names.is_empty() {
        return (text == template).then(BTreeMap::new);
    }
    let mut s = text.strip_prefix(literals[0])?;
    let mut out = BTreeMap::new();
    for (i, n) in names.iter().enumerate() {
        let next = literals[i + 1];
        let value = if i + 1 == names.len() {
            s.strip_suffix(next)?
        } else if next.is_empty() {
            return None;
        } else {
            &s[..s.find(next)?]
        };
        if value.is_empty() {
            return None;
        }
        out.insert(n.clone(), value.to_string());
        s = s.get(value.len() + next.len()..).unwrap_or("");
    }
    Some(out)
}

fn label(e: &Element) -> String {
    let mut parts: Vec<&str> = Vec::new();
    for v in [&e.text, &e.hint_text, &e.content_description, &e.tooltip].into_iter().flatten() {
        if !parts.contains(&v.as_str()) {
            parts.push(v);
        }
    }
    parts.join(" / ")
}

fn screen_summary(s: &[Element]) -> String {
    let labels: Vec<String> = s.iter().map(label).filter(|l| !l.is_empty()).take(6).collect();
    if labels.is_empty() {
        "The screen shows no labelled elements.".into()
    } else {
        format!("The screen shows {}.", labels.join(", "))
    }
}

fn lit(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

/// Attribute-based code performing `action` on `screen`.
fn soft_code(action: &HardAction, screen: &[Element]) -> (String, String) {
    if !action.kind.needs_index() {
        return ("No element is involved, so the call stays as it is.".into(), format!("{action}\n"));
    }
    let Some(e) = action.index.and_then(|i| screen.iter().find(|e| e.index as i64 == i)) else {
        return ("The element is not on the screen.".into(), format!("{action}\n"));
    };
    let call = match action.kind {
        ActionKind::InputText => format!("env_op.input_text(index, {})", lit(action.text_arg.as_deref().unwrap_or(""))),
        k => format!("env_op.{}(index)", k.as_str()),
    };
    if let Some(cell) = e.tooltip.as_deref().filter(|t| t.starts_with("cell-")) {
        let code = format!(
            "cell = env_op.ask_mllm(\"Which empty cell (0-8) gives X the best move?\", \"a single digit\")\nkwargs = {{\"tooltip\": \"cell-\" + cell, \"target_description\": \"Board cell chosen for the next move\"}}\nindex = env_op.find_element(**kwargs)\n{call}\n"
        );
        return (format!("The board cell ({cell}) depends on the position, so the vision model picks it."), code);
    }
    let mut kw: Vec<(String, String)> = Vec::new();
    let mut why = String::new();
    if e.accepts_text() {
        if let Some(h) = &e.hint_text {
            kw.push(("hint_text".into(), lit(h)));
            why = "The hint stays the same while the typed text changes.".into();
        } else if !e.additional_actions.is_empty() {
            let tags: Vec<String> = e.additional_actions.iter().map(|t| lit(t.as_str())).collect();
            kw.push(("additional_actions".into(), format!("[{}]", tags.join(", "))));
            why = "The box has no label, but it is the only one accepting these actions.".into();
        }
    }
    if kw.is_empty() {
        for (k, v) in [("text", &e.text), ("content_description", &e.content_description), ("tooltip", &e.tooltip), ("hint_text", &e.hint_text)] {
            if let Some(v) = v {
                kw.push((k.to_string(), lit(v)));
                why = format!("The {k} names the element.");
                break;
            }
        }
    }
    let target = match label(e) {
        l if l.is_empty() => "Unlabelled element".to_string(),
        l => l,
    };
    kw.push(("target_description".into(), lit(&target)));
    let dict: Vec<String> = kw.iter().map(|(k, v)| format!("{}: {v}", lit(k))).collect();
    let code = format!("kwargs = {{{}}}\nindex = env_op.find_element(**kwargs)\n{call}\n", dict.join(", "));
    (why, code)
}

impl Author {
    fn react(&self, req: &ChatRequest) -> String {
        let b = blocks(first_user(req));
        let screen = parse_screen(get(&b, "Current Screen"));
        let steps = get(&b, "History").lines().filter(|l| l.starts_with("Step ")).count();
        let ident = self.identify(get(&b, "Task"));
        let (plan, d) = match (&ident, self.profile) {
            (_, Profile::FailingReact) => ("1. Give up.".to_string(), policy::hopeless()),
            (Some((task, bind)), _) => (policy::plan(task, bind), policy::decide(task, bind, &screen)),
            (None, _) => ("1. Give up.".to_string(), policy::hopeless()),
        };
        let done = if steps == 0 { "Nothing yet.".to_string() } else { format!("{steps} step(s) are done.") };
        let mut out = format!(
            "### Observations:\n{}\n### Completed Tasks:\n{done}\n### Plan Justification:\nThe plan follows the order the app asks for the inputs.\n### Plan List:\n{plan}\n### Next Action Justification:\n{}\n### Action:\n```python\n{}\n```\n",
            screen_summary(&screen),
            d.reason,
            d.action
        );
        if req.system_prompt().contains("### Soft-coded Action:") {
            let (_, code) = soft_code(&d.action, &screen);
            out.push_str(&format!("### Soft-coded Action:\n```python\n{code}```\n"));
        }
        out
    }

    fn build(&self, req: &ChatRequest) -> String {
        let b = blocks(first_user(req));
        let Some(task) = self.task_for_template(get(&b, "Task Template")) else {
            return "### Thought:\nThe task is unknown.\n".into();
        };
        let refining = b.contains_key("Previous Function");
        let tool_calls = req.messages.iter().filter(|m| m.role == Role::Tool).count();
        let reasked = is_reask(req.last_input());
        if refining && tool_calls == 0 && !reasked && get(&b, "Available Trajectories").contains("- fix_react_traj:") {
            return "I want to see how the step agent finished the failed run.\n```json\n{\"action\": \"fetch_info\", \"arguments\": {\"source\": \"fix_react_traj\"}}\n```\n".into();
        }
        let listing = listing(&task, refining);
        let failure = get(&b, "Latest Run")
            .lines()
            .find_map(|l| l.strip_prefix("--- program stopped: "))
            .unwrap_or("")
            .to_string();
        render_listing(listing, refining, &failure, self.profile == Profile::BrokenBuilder)
    }

    fn execute(&self, req: &ChatRequest) -> String {
        let system = req.system_prompt();
        let instruction = first_user(req).trim().strip_prefix("New Task:").unwrap_or("").trim();
        let bind = self.identify(instruction).map(|(_, b)| b).unwrap_or_default();
        let params: Vec<String> = system
            .split_once("Parameters:\n")
            .map(|(_, r)| r.split_once("\n\nExample Usage:").map_or(r, |(p, _)| p))
            .unwrap_or("")
            .lines()
            .filter_map(|l| l.trim().strip_prefix("- "))
            .filter_map(|l| l.split([' ', ':', '(']).next())
            .map(str::to_string)
            .collect();
        let name = system
            .split_once("Example Usage:\n```python\n")
            .and_then(|(_, r)| r.split_once('('))
            .map(|(n, _)| n.trim().to_string())
            .unwrap_or_else(|| "function".into());
        let mut args = Vec::new();
        for p in params {
            let v = match bind.get(&p) {
                Some(v) => Some(v.clone()),
                None if p == "file_extension" => bind.get("file_name").and_then(|f| f.rsplit_once('.')).map(|(_, e)| e.to_string()),
                None => None,
            };
            if let Some(v) = v {
                args.push(format!("{p}={}", lit(&v)));
            }
        }
        format!("```python\n{name}({})\n```\n", args.join(", "))
    }
}

fn listing(task: &str, refined: bool) -> &'static str {
    match (task, refined) {
        (bundled::NOTE_CREATE, false) => bundled::NOTE_INITIAL_RPA,
        (bundled::NOTE_CREATE, true) => bundled::NOTE_REFINED_RPA,
        (bundled::LIST_SEARCH, false) => include_str!("../../assets/sim/list_search_initial.rpa"),
        (bundled::LIST_SEARCH, true) => include_str!("../../assets/sim/list_search_refined.rpa"),
        (bundled::FORM_FILL, _) => include_str!("../../assets/sim/form_fill.rpa"),
        (bundled::SETTINGS_THEME, _) => include_str!("../../assets/sim/settings_theme.rpa"),
        _ => include_str!("../../assets/sim/tic_tac_toe.rpa"),
    }
}

const BROKEN_LOOKUP: &str = "    kwargs = {\"text\": \"Quick start\", \"target_description\": \"Quick start banner\"}\n    banner_index = env_op.find_element(**kwargs)\n    assert banner_index != -1, \"Quick start banner not found\"\n";

fn render_listing(listing: &str, refining: bool, failure: &str, broken: bool) -> String {
    let program = parse(listing).expect("bundled listing parses");
    let code_start = listing.find("def ").expect("listing defines a function");
    let mut code = listing[code_start..].to_string();
    if broken {
        let body = code.find('\n').expect("def line ends") + 1;
        code.insert_str(body, BROKEN_LOOKUP);
    }
    let params: Vec<String> = program
        .doc
        .params
        .iter()
        .map(|p| match &p.ty {
            Some(t) => format!("- {} ({t}): {}", p.name, p.doc),
            None => format!("- {}: {}", p.name, p.doc),
        })
        .collect();
    let conclusion = if !refining {
        "First version, taken from the successful run.".to_string()
    } else if failure.is_empty() {
        "The function is unchanged; the last run gave no failure to fix.".to_string()
    } else {
        format!("The previous version stopped with \"{failure}\"; this version follows what the step agent did from there.")
    };
    format!(
        "### Thought:\nEach step of the recorded run becomes an attribute lookup followed by the same action, with the task variables as parameters.\n### Parameters:\n{}\n### Skill Description:\n{}\n### Skill Code:\n```python\n{}```\n### Example Usage:\n```python\n{}\n```\n### Conclusion:\n{conclusion}\n",
        params.join("\n"),
        program.doc.description,
        code,
        program.doc.example_usage.trim_end()
    )
}

fn summarize(msg: &str) -> String {
    let b = blocks(msg);
    let before = get(&b, "Screen Before");
    let after = get(&b, "Screen After");
    let call = get(&b, "Executed Call");
    let quiet = ["env_op.wait(", "env_op.answer(", "env_op.stop("].iter().any(|p| call.starts_with(p));
    if before == after && !quiet {
        return format!("### Screen Changes:\nNothing Happens.\n### Execution Summary:\n{call} had no visible effect.\n");
    }
    let labels = |d: &str| parse_screen(d).iter().map(label).filter(|l| !l.is_empty()).collect::<BTreeSet<_>>();
    let (lb, la) = (labels(before), labels(after));
    let added: Vec<_> = la.difference(&lb).take(4).cloned().collect();
    let removed: Vec<_> = lb.difference(&la).take(4).cloned().collect();
    let changes = match (added.is_empty(), removed.is_empty()) {
        (true, true) if before == after => "Nothing Happens.".to_string(),
        (true, true) => "Element states changed.".to_string(),
        _ => format!("Appeared: {}. Gone: {}.", or_none(&added), or_none(&removed)),
    };
    let intent = get(&b, "Intent");
    format!("### Screen Changes:\n{changes}\n### Execution Summary:\n{call} succeeded. {intent}\n")
}

fn or_none(v: &[String]) -> String {
    if v.is_empty() {
        "none".into()
    } else {
        v.join(", ")
    }
}

fn conclude(msg: &str) -> String {
    let b = blocks(msg);
    let steps = get(&b, "Steps").lines().filter(|l| l.starts_with("Step ")).count();
    if get(&b, "Outcome").trim() == "success" {
        return format!("### Episode Conclusion:\nThe task was completed in {steps} step(s) and the final screen confirms it.\n");
    }
    let gave_up = get(&b, "Steps").contains("env_op.stop(\"infeasible\")");
    let advice = if gave_up {
        "Giving up was premature. Open the app named in the task and look for the controls it mentions before stopping."
    } else {
        "Check each entered value against the task text before confirming, and only stop once the screen shows the result."
    };
    format!("### Episode Conclusion:\nThe episode ended after {steps} step(s) without completing the task.\n### Reflection:\n{advice}\n")
}

fn translate(msg: &str) -> String {
    let b = blocks(msg);
    let screen = parse_screen(get(&b, "Screen Before"));
    let (why, code) = match action_from_code(get(&b, "Executed Action")) {
        Ok(a) => soft_code(&a, &screen),
        Err(e) => (format!("The action could not be read: {e}"), String::from("env_op.wait()\n")),
    };
    format!("### Thought:\n{why}\n### Soft-coded Action:\n```python\n{code}```\n")
}

fn analyze(msg: &str) -> String {
    let b = blocks(msg);
    let screen = parse_screen(get(&b, "Current Screen"));
    let steps = get(&b, "Executed Steps").lines().filter(|l| l.starts_with("Step ")).count();
    let over = get(&b, "Episode Status").trim() == "ended";
    let game_over = ["You lose!", "Draw", "You win!"].iter().any(|t| screen.iter().any(|e| e.text.as_deref() == Some(t)));
    let (verdict, plan, why) = if over || game_over {
        ("N", "1. Start the task again from the first screen.\n2. Follow the task text step by step.", "Nothing can be changed on this screen any more.")
    } else {
        ("Y", "1. Deal with what stopped the function on this screen.\n2. Carry out the remaining steps of the task.\n3. Stop once the task is done.", "The screen is still usable, so the remaining steps can be done from here.")
    };
    format!(
        "### Observations:\n{}\n### Completed Tasks:\nThe function ran {steps} step(s) before it stopped: {}\n### Plan Justification:\n{why}\n### Plan List:\n{plan}\n### Whether To Continue:\n{verdict}\n",
        screen_summary(&screen),
        get(&b, "Failure").trim()
    )
}

fn word_set(s: &str) -> BTreeSet<String> {
    s.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase).collect()
}

fn ground(msg: &str) -> String {
    let target = msg.lines().find_map(|l| l.strip_prefix("Target description: ")).unwrap_or("");
    let want = word_set(target);
    let mut best: Option<(i64, usize)> = None;
    for e in parse_screen(msg.split_once("Candidates:\n").map_or("", |(_, r)| r)) {
        let score = word_set(&label(&e)).intersection(&want).count();
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((e.index as i64, score));
        }
    }
    best.map_or_else(|| "-1".into(), |(i, _)| i.to_string())
}

fn look(msg: &str) -> String {
    let b = blocks(msg);
    let screen = parse_screen(get(&b, "Current Screen"));
    match policy::board(&screen).and_then(|bd| policy::best_move(&bd)) {
        Some(c) => c.to_string(),
        None => "none".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_match_back() {
        let t = "Create a new note in Markor named {file_name} with the following text: {text}";
        let b = match_template(t, "Create a new note in Markor named a.md with the following text: Hi there.").unwrap();
        assert_eq!(b["file_name"], "a.md");
        assert_eq!(b["text"], "Hi there.");
        assert!(match_template(t, "Something else").is_none());
        let b = match_template("Change the display theme to {theme} in Settings.", "Change the display theme to System default in Settings.").unwrap();
        assert_eq!(b["theme"], "System default");
    }

    #[test]
    fn blocks_skip_fenced_lines() {
        let b = blocks("[A]\nx\n```python\n[B]\n```\n[C]\ny\n");
        assert!(b["A"].contains("[B]"));
        assert_eq!(b["C"], "y");
    }

    #[test]
    fn every_listing_renders_as_a_valid_reply() {
        for task in bundled::task_set().ids() {
            for refined in [false, true] {
                for broken in [false, true] {
                    let reply = render_listing(listing(task, refined), refined, "x", broken);
                    let f = crate::agents::parse_builder_reply(&reply).unwrap_or_else(|e| panic!("{task}: {e}"));
                    assert_eq!(f.source.contains("Quick start"), broken);
                }
            }
        }
    }
}
