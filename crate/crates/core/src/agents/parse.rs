//! Helpers for `### Heading:` sectioned replies and fenced code blocks.

/// Splits `text` at lines of the form `### Name:` outside code fences. Text
/// before the first heading is dropped.
pub fn sections(text: &str) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    let mut in_fence = false;
    for line in text.lines() {
        let t = line.trim();
        if t.starts_with("```") {
            in_fence = !in_fence;
        }
        if let Some(rest) = t.strip_prefix("###").filter(|_| !in_fence) {
            let rest = rest.trim();
            if let Some(name) = rest.strip_suffix(':') {
                if !name.is_empty() && !name.contains('`') {
                    out.push((name.trim().to_string(), String::new()));
                    continue;
                }
            }
        }
        if let Some((_, body)) = out.last_mut() {
            body.push_str(line);
            body.push('\n');
        }
    }
    for (_, body) in &mut out {
        *body = body.trim().to_string();
    }
    out
}

/// Body of the first section named `name` (case-insensitive).
pub fn section<'a>(secs: &'a [(String, String)], name: &str) -> Option<&'a str> {
    secs.iter().find(|(n, _)| n.eq_ignore_ascii_case(name)).map(|(_, b)| b.as_str())
}

/// Like [`section`] but errors with the missing heading's name.
pub fn require<'a>(secs: &'a [(String, String)], name: &str) -> Result<&'a str, String> {
    match section(secs, name) {
        Some(b) => Ok(b),
        None => Err(format!("missing section \"### {name}:\"")),
    }
}

/// Fenced code blocks as `(language, body)`.
pub fn fenced_blocks(text: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut cur: Option<(String, String)> = None;
    for line in text.lines() {
        let t = line.trim_start();
        if let Some(rest) = t.strip_prefix("```") {
            match cur.take() {
                Some(block) => out.push(block),
                None => cur = Some((rest.trim().to_string(), String::new())),
            }
            continue;
        }
        if let Some((_, body)) = cur.as_mut() {
            body.push_str(line);
            body.push('\n');
        }
    }
    out
}

/// First fenced block in `text`; an unterminated block is an error.
pub fn first_code(text: &str) -> Result<String, String> {
    let fences = text.lines().filter(|l| l.trim_start().starts_with("```")).count();
    if fences % 2 == 1 {
        return Err("unterminated code block".into());
    }
    fenced_blocks(text).into_iter().next().map(|(_, b)| b).ok_or_else(|| "missing fenced code block".to_string())
}

/// Non-blank lines that are not own-line comments.
pub fn code_lines(code: &str) -> Vec<&str> {
    code.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_sections() {
        let t = "intro\n### A:\none\ntwo\n### B:\n\n### C:\nx\n";
        let s = sections(t);
        assert_eq!(s.len(), 3);
        assert_eq!(section(&s, "a"), Some("one\ntwo"));
        assert_eq!(section(&s, "B"), Some(""));
        assert!(require(&s, "D").unwrap_err().contains("### D:"));
    }

    #[test]
    fn heading_inside_code_is_kept() {
        let t = "### Code:\n```python\n### RPA Code:\nx = 1\n```\n";
        let s = sections(t);
        assert_eq!(s.len(), 1);
        assert!(s[0].1.contains("### RPA Code:"));
    }

    #[test]
    fn fences() {
        let t = "a\n```python\nx = 1\n```\n```json\n{}\n```\n";
        let b = fenced_blocks(t);
        assert_eq!(b, vec![("python".into(), "x = 1\n".into()), ("json".into(), "{}\n".into())]);
        assert!(first_code("```python\nx\n").is_err());
        assert!(first_code("none").is_err());
    }
}
