//! Task types shipped with the crate.

use crate::env::TaskSet;

/// Raw JSON of the bundled task file.
pub const TASKS_JSON: &str = include_str!("../assets/tasks.json");

pub const NOTE_CREATE: &str = "note-create";
pub const FORM_FILL: &str = "form-fill";
pub const LIST_SEARCH: &str = "list-search";
pub const SETTINGS_THEME: &str = "settings-theme";
pub const TIC_TAC_TOE: &str = "tic-tac-toe";

pub fn task_set() -> TaskSet {
    TaskSet::from_json(TASKS_JSON).expect("bundled task file is valid")
}

/// Reference note-creation program that only handles `.md` names.
pub const NOTE_INITIAL_RPA: &str = include_str!("../assets/listings/note_initial.rpa");
/// Note-creation program after repair; also sets the extension box.
pub const NOTE_REFINED_RPA: &str = include_str!("../assets/listings/note_refined.rpa");
/// A single translated step typing into a password box.
pub const PASSWORD_SNIPPET: &str = include_str!("../assets/listings/password_snippet.rpa");
