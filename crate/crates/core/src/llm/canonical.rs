use sha2::{Digest, Sha256};

use super::ChatRequest;

/// Line prefixes whose content changes between otherwise identical calls.
const VOLATILE: [&str; 3] = ["timestamp:", "request_id:", "date:"];

/// Stable text form of a request: whitespace runs collapsed, line ends
/// trimmed, blank-line runs collapsed, volatile lines dropped.
pub fn canonicalize(req: &ChatRequest) -> String {
    let mut out = format!(
        "agent: {}\ntemperature: {}\nmax_tokens: {}\n",
        req.agent_tag.as_str(),
        req.decode.temperature,
        req.decode.max_tokens
    );
    for m in &req.messages {
        out.push('[');
        out.push_str(m.role.as_str());
        out.push_str("]\n");
        let mut blank = true;
        let mut lines: Vec<String> = Vec::new();
        for line in m.content.lines() {
            let line = line.split_whitespace().collect::<Vec<_>>().join(" ");
            let lower = line.to_ascii_lowercase();
            if VOLATILE.iter().any(|p| lower.starts_with(p)) {
                continue;
            }
            if line.is_empty() {
                if blank {
                    continue;
                }
                blank = true;
            } else {
                blank = false;
            }
            lines.push(line);
        }
        if lines.last().is_some_and(|l| l.is_empty()) {
            lines.pop();
        }
        for l in lines {
            out.push_str(&l);
            out.push('\n');
        }
    }
    out
}

pub fn request_key(canonical: &str) -> String {
    hex::encode(Sha256::digest(canonical.as_bytes()))
}
