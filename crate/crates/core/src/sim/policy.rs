//! Screen-driven step policies for the bundled task types.

use std::collections::BTreeMap;

use crate::env::{ActionTag, Direction, Element, HardAction, StopStatus};

pub(super) struct Decision {
    pub reason: String,
    pub action: HardAction,
}

fn decision(reason: impl Into<String>, action: HardAction) -> Decision {
    Decision { reason: reason.into(), action }
}

fn by(screen: &[Element], f: impl Fn(&Element) -> bool) -> Option<&Element> {
    screen.iter().find(|e| f(e))
}

fn is(v: &Option<String>, want: &str) -> bool {
    v.as_deref() == Some(want)
}

fn text<'a>(s: &'a [Element], t: &str) -> Option<&'a Element> {
    by(s, |e| is(&e.text, t))
}

fn desc<'a>(s: &'a [Element], t: &str) -> Option<&'a Element> {
    by(s, |e| is(&e.content_description, t))
}

fn hint<'a>(s: &'a [Element], t: &str) -> Option<&'a Element> {
    by(s, |e| is(&e.hint_text, t))
}

fn idx(e: &Element) -> i64 {
    e.index as i64
}

fn give_up(why: &str) -> Decision {
    decision(format!("{why}; there is nothing sensible left to try."), HardAction::stop(StopStatus::Infeasible))
}

pub(super) fn plan(task: &str, b: &BTreeMap<String, String>) -> String {
    let get = |k: &str| b.get(k).cloned().unwrap_or_default();
    match task {
        "note-create" => format!(
            "1. Open Markor.\n2. Tap the create button.\n3. Enter the name {} and its extension.\n4. Confirm, type the text and save.\n5. Stop.",
            get("file_name")
        ),
        "form-fill" => format!(
            "1. Type {} into the name box.\n2. Type {} into the email box.\n3. Press the Submit button of the contact form.\n4. Stop.",
            get("name"),
            get("email")
        ),
        "list-search" => format!(
            "1. Open Shop.\n2. Scroll until {} is visible and open it.\n3. Add it to the cart.\n4. Stop.",
            get("item")
        ),
        "settings-theme" => format!(
            "1. Open Settings, then Display.\n2. Open Theme and pick {}.\n3. Apply and confirm.\n4. Stop.",
            get("theme")
        ),
        "tic-tac-toe" => "1. Play the strongest free cell each turn.\n2. Stop once the banner says the game is won.".into(),
        _ => "1. Work out what the task needs.".into(),
    }
}

pub(super) fn decide(task: &str, b: &BTreeMap<String, String>, s: &[Element]) -> Decision {
    let get = |k: &str| b.get(k).cloned().unwrap_or_default();
    match task {
        "note-create" => note(&get("file_name"), &get("text"), s),
        "form-fill" => form(&get("name"), &get("email"), s),
        "list-search" => shop(&get("item"), s),
        "settings-theme" => theme(&get("theme"), s),
        "tic-tac-toe" => game(s),
        _ => give_up("This task is unknown"),
    }
}

/// Stand-in for a model that cannot find its way: it opens nothing and quits.
pub(super) fn hopeless() -> Decision {
    give_up("The screen does not show anything related to the task")
}

fn note(file_name: &str, body: &str, s: &[Element]) -> Decision {
    let (stem, ext) = match file_name.rsplit_once('.') {
        Some((a, b)) => (a.to_string(), format!(".{b}")),
        None => (file_name.to_string(), String::new()),
    };
    if text(s, "12:30").is_some() {
        return decision("Markor is where notes are created.", HardAction::open_app("Markor"));
    }
    if let Some(fab) = desc(s, "Create a new file or folder") {
        return decision("The create button opens the new file dialog.", HardAction::click(idx(fab)));
    }
    if text(s, "Create new file").is_some() {
        if desc(s, "Loading").is_some() {
            return decision("The dialog is still loading.", HardAction::wait());
        }
        if let Some(name) = hint(s, "my_note") {
            if name.text.as_deref().unwrap_or("") != stem {
                return decision(format!("The name box should hold {stem}."), HardAction::input_text(idx(name), &stem));
            }
        }
        if let Some(e) = hint(s, ".md") {
            if !ext.is_empty() && e.text.as_deref().unwrap_or("") != ext {
                return decision(format!("The extension box should hold {ext}."), HardAction::input_text(idx(e), &ext));
            }
        }
        return match text(s, "OK") {
            Some(ok) => decision("Name and extension are set, so confirm.", HardAction::click(idx(ok))),
            None => give_up("The dialog has no confirm button"),
        };
    }
    if let Some(save) = desc(s, "Save") {
        let editor = by(s, |e| e.additional_actions.contains(&ActionTag::InputText) && e.additional_actions.contains(&ActionTag::LongPress));
        if let Some(ed) = editor {
            if ed.text.as_deref().unwrap_or("") != body {
                return decision("The note body still has to be typed.", HardAction::input_text(idx(ed), body));
            }
        }
        if text(s, "Saved").is_none() {
            return decision("The text is in place; save it.", HardAction::click(idx(save)));
        }
        return decision("The note is saved with the right name and text.", HardAction::stop(StopStatus::Complete));
    }
    decision("This screen is not part of the note flow.", HardAction::go_back())
}

fn form(name: &str, email: &str, s: &[Element]) -> Decision {
    if text(s, "Thanks, we will be in touch.").is_some() {
        return decision("The form was sent.", HardAction::stop(StopStatus::Complete));
    }
    if let Some(back) = text(s, "Back to form") {
        return decision("The newsletter button was pressed by mistake; go back.", HardAction::click(idx(back)));
    }
    if let Some(n) = hint(s, "Full name") {
        if n.text.as_deref().unwrap_or("") != name {
            return decision("The name box is not filled yet.", HardAction::input_text(idx(n), name));
        }
    }
    if let Some(e) = hint(s, "Email address") {
        if e.text.as_deref().unwrap_or("") != email {
            return decision("The email box is not filled yet.", HardAction::input_text(idx(e), email));
        }
    }
    match by(s, |e| is(&e.tooltip, "Send the contact form")) {
        Some(b) => decision("Both fields are filled; send the contact form.", HardAction::click(idx(b))),
        None => give_up("The contact form has no send button"),
    }
}

fn shop(item: &str, s: &[Element]) -> Decision {
    if text(s, "12:30").is_some() {
        return decision("The products are in the Shop app.", HardAction::open_app("Shop"));
    }
    if text(s, "Products").is_some() {
        if let Some(row) = text(s, item) {
            return decision(format!("{item} is visible; open it."), HardAction::click(idx(row)));
        }
        if text(s, "Zucchini").is_some() {
            return give_up(&format!("The list ends without {item}"));
        }
        return decision(format!("{item} is not visible yet; scroll further."), HardAction::swipe(Direction::Up));
    }
    if let Some(add) = text(s, "Add to cart") {
        if text(s, item).is_none() {
            return decision("This is the wrong product.", HardAction::go_back());
        }
        if text(s, "Added to cart").is_none() {
            return decision(format!("Add {item} to the cart."), HardAction::click(idx(add)));
        }
        return decision(format!("{item} is in the cart."), HardAction::stop(StopStatus::Complete));
    }
    decision("This screen is not part of the shop.", HardAction::go_back())
}

fn theme(want: &str, s: &[Element]) -> Decision {
    if text(s, "12:30").is_some() {
        return decision("The theme lives in Settings.", HardAction::open_app("Settings"));
    }
    if text(s, "Network & internet").is_some() {
        return match text(s, "Display") {
            Some(d) => decision("The theme is a display setting.", HardAction::click(idx(d))),
            None => give_up("Settings has no Display entry"),
        };
    }
    if let Some(entry) = text(s, "Theme") {
        if is(&entry.hint_text, want) {
            return decision(format!("The theme is now {want}."), HardAction::stop(StopStatus::Complete));
        }
        return decision("Open the theme chooser.", HardAction::click(idx(entry)));
    }
    if text(s, "Choose theme").is_some() {
        if text(s, &format!("Selected: {want}")).is_some() {
            return match text(s, "Apply") {
                Some(a) => decision(format!("{want} is selected; apply it."), HardAction::click(idx(a))),
                None => give_up("The chooser has no Apply button"),
            };
        }
        return match text(s, want) {
            Some(o) => decision(format!("Select {want}."), HardAction::click(idx(o))),
            None => give_up(&format!("There is no {want} option")),
        };
    }
    if text(s, "Not now").is_some() {
        return match text(s, "OK") {
            Some(ok) => decision("Confirm the new theme.", HardAction::click(idx(ok))),
            None => give_up("The confirmation has no OK button"),
        };
    }
    decision("This screen is not on the way to the theme.", HardAction::go_back())
}

/// Board marks by cell number, read from the cell tooltips.
pub(super) fn board(s: &[Element]) -> Option<[char; 9]> {
    let mut b = [' '; 9];
    let mut seen = 0;
    for e in s {
        let Some(n) = e.tooltip.as_deref().and_then(|t| t.strip_prefix("cell-")).and_then(|n| n.parse::<usize>().ok()) else {
            continue;
        };
        if n < 9 {
            b[n] = e.text.as_deref().and_then(|t| t.chars().next()).unwrap_or(' ');
            seen += 1;
        }
    }
    (seen == 9).then_some(b)
}

const LINES: [[usize; 3]; 8] = [[0, 1, 2], [3, 4, 5], [6, 7, 8], [0, 3, 6], [1, 4, 7], [2, 5, 8], [0, 4, 8], [2, 4, 6]];

fn winner(b: &[char; 9]) -> Option<char> {
    LINES.iter().find(|l| b[l[0]] != ' ' && b[l[0]] == b[l[1]] && b[l[1]] == b[l[2]]).map(|l| b[l[0]])
}

/// Score for X with `to_move` playing next: 1 win, 0 draw, -1 loss.
fn minimax(b: &mut [char; 9], to_move: char) -> i32 {
    if let Some(w) = winner(b) {
        return if w == 'X' { 1 } else { -1 };
    }
    if b.iter().all(|c| *c != ' ') {
        return 0;
    }
    let mut best = if to_move == 'X' { -2 } else { 2 };
    for i in 0..9 {
        if b[i] != ' ' {
            continue;
        }
        b[i] = to_move;
        let v = minimax(b, if to_move == 'X' { 'O' } else { 'X' });
        b[i] = ' ';
        best = if to_move == 'X' { best.max(v) } else { best.min(v) };
    }
    best
}

/// Best free cell for X, lowest number on ties.
pub(super) fn best_move(b: &[char; 9]) -> Option<usize> {
    let mut work = *b;
    let mut best: Option<(usize, i32)> = None;
    for i in 0..9 {
        if work[i] != ' ' {
            continue;
        }
        work[i] = 'X';
        let v = minimax(&mut work, 'O');
        work[i] = ' ';
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

fn game(s: &[Element]) -> Decision {
    if text(s, "You win!").is_some() {
        return decision("The game is won.", HardAction::stop(StopStatus::Complete));
    }
    if text(s, "You lose!").is_some() || text(s, "Draw").is_some() {
        return give_up("The game is over without a win");
    }
    let Some(b) = board(s) else { return give_up("No board is visible") };
    let Some(cell) = best_move(&b) else { return give_up("The board is full") };
    match by(s, |e| is(&e.tooltip, &format!("cell-{cell}"))) {
        Some(e) => decision(format!("Cell {cell} is the strongest free cell."), HardAction::click(idx(e))),
        None => give_up("The chosen cell is missing"),
    }
}
