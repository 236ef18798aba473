use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AgentTag, LlmError, Phase};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub agent_tag: AgentTag,
    pub phase: Phase,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_time_ms: u64,
    #[serde(default)]
    pub estimated: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_time_ms: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    fn add(&mut self, e: &LedgerEntry) {
        self.calls += 1;
        self.prompt_tokens += e.prompt_tokens;
        self.completion_tokens += e.completion_tokens;
        self.wall_time_ms += e.wall_time_ms;
    }
}

/// Append-only record of model calls.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLedger {
    entries: Vec<LedgerEntry>,
}

impl TokenLedger {
    pub fn push(&mut self, e: LedgerEntry) {
        self.entries.push(e);
    }

    pub fn extend(&mut self, other: &TokenLedger) {
        self.entries.extend(other.entries.iter().cloned());
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn usage(&self) -> Usage {
        let mut u = Usage::default();
        for e in &self.entries {
            u.add(e);
        }
        u
    }

    pub fn total(&self) -> u64 {
        self.usage().total()
    }

    pub fn by_phase(&self) -> BTreeMap<Phase, Usage> {
        let mut m = BTreeMap::new();
        for e in &self.entries {
            m.entry(e.phase).or_insert_with(Usage::default).add(e);
        }
        m
    }

    pub fn by_agent(&self) -> BTreeMap<AgentTag, Usage> {
        let mut m = BTreeMap::new();
        for e in &self.entries {
            m.entry(e.agent_tag).or_insert_with(Usage::default).add(e);
        }
        m
    }

    pub fn phase(&self, phase: Phase) -> TokenLedger {
        TokenLedger { entries: self.entries.iter().filter(|e| e.phase == phase).cloned().collect() }
    }

    /// Entries added after the first `n`.
    pub fn since(&self, n: usize) -> TokenLedger {
        TokenLedger { entries: self.entries.get(n..).unwrap_or_default().to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReductionRow {
    pub label: String,
    pub react_tokens: u64,
    pub rpa_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionReport {
    pub react_total: u64,
    pub rpa_total: u64,
    /// `1 - rpa_total / react_total`, in percent.
    pub percent_reduction: f64,
    pub per_phase: Vec<ReductionRow>,
    pub per_agent: Vec<ReductionRow>,
}

impl ReductionReport {
    /// Exact reduction as a fraction `(react - rpa, react)`.
    pub fn reduction_ratio(&self) -> (i128, u64) {
        (self.react_total as i128 - self.rpa_total as i128, self.react_total)
    }
}

/// Testing-phase token reduction of `rpa` relative to `react`.
pub fn reduction_report(react: &TokenLedger, rpa: &TokenLedger) -> Result<ReductionReport, LlmError> {
    let react_t = react.phase(Phase::Testing);
    let rpa_t = rpa.phase(Phase::Testing);
    let react_total = react_t.total();
    if react_total == 0 {
        return Err(LlmError::DivisionByZero);
    }
    let rpa_total = rpa_t.total();
    let percent_reduction = 100.0 * (1.0 - rpa_total as f64 / react_total as f64);
    let (rp, pp) = (react.by_phase(), rpa.by_phase());
    let per_phase = Phase::ALL
        .iter()
        .map(|p| ReductionRow {
            label: p.as_str().into(),
            react_tokens: rp.get(p).map_or(0, Usage::total),
            rpa_tokens: pp.get(p).map_or(0, Usage::total),
        })
        .collect();
    let (ra, pa) = (react_t.by_agent(), rpa_t.by_agent());
    let per_agent = AgentTag::ALL
        .iter()
        .filter(|a| ra.contains_key(a) || pa.contains_key(a))
        .map(|a| ReductionRow {
            label: a.as_str().into(),
            react_tokens: ra.get(a).map_or(0, Usage::total),
            rpa_tokens: pa.get(a).map_or(0, Usage::total),
        })
        .collect();
    Ok(ReductionReport { react_total, rpa_total, percent_reduction, per_phase, per_agent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(agent: AgentTag, phase: Phase, p: u64, c: u64) -> LedgerEntry {
        LedgerEntry { agent_tag: agent, phase, prompt_tokens: p, completion_tokens: c, wall_time_ms: 1, estimated: false }
    }

    fn single(total: u64) -> TokenLedger {
        let mut l = TokenLedger::default();
        l.push(entry(AgentTag::React, Phase::Testing, total, 0));
        l
    }

    #[test]
    fn three_calls_sum() {
        let mut l = TokenLedger::default();
        for _ in 0..3 {
            l.push(entry(AgentTag::Executor, Phase::Testing, 100, 50));
        }
        assert_eq!(l.total(), 450);
        assert_eq!(l.by_agent()[&AgentTag::Executor].calls, 3);
    }

    #[test]
    fn table_reductions() {
        let r = reduction_report(&single(68_700), &single(12_800)).unwrap();
        assert_eq!((r.percent_reduction * 10.0).round() / 10.0, 81.4);
        let r = reduction_report(&single(79_900), &single(2_600)).unwrap();
        assert_eq!((r.percent_reduction * 10.0).round() / 10.0, 96.7);
        let r = reduction_report(&single(500), &single(500)).unwrap();
        assert_eq!(r.percent_reduction, 0.0);
        assert_eq!(r.reduction_ratio(), (0, 500));
    }

    #[test]
    fn zero_react_total_is_an_error() {
        assert!(matches!(reduction_report(&TokenLedger::default(), &single(3)), Err(LlmError::DivisionByZero)));
    }

    fn arb_entry() -> impl Strategy<Value = LedgerEntry> {
        (0..AgentTag::ALL.len(), 0..3usize, 0u64..10_000, 0u64..10_000)
            .prop_map(|(a, p, x, y)| entry(AgentTag::ALL[a], Phase::ALL[p], x, y))
    }

    proptest! {
        #[test]
        fn rollups_conserve_totals(es in prop::collection::vec(arb_entry(), 0..40)) {
            let mut l = TokenLedger::default();
            for e in es.iter().cloned() {
                l.push(e);
            }
            let by_agent: u64 = l.by_agent().values().map(Usage::total).sum();
            let by_phase: u64 = l.by_phase().values().map(Usage::total).sum();
            let direct: u64 = es.iter().map(|e| e.prompt_tokens + e.completion_tokens).sum();
            prop_assert_eq!(by_agent, direct);
            prop_assert_eq!(by_phase, direct);
            prop_assert_eq!(l.total(), direct);
        }
    }
}
