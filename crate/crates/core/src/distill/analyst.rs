//! Analyst interfaces and the deterministic template analysts.

use crate::card::{RoleHint, TraceCard};
use crate::event::Outcome;

use super::oracle::{LookupError, Mismatch, Oracle, OracleBudget, OracleSession};
use super::patch::{Action, Confidence, Patch, TaxonomyCode, WastePattern};
use super::skill::SkillDocument;

/// What an analyst sees for one trajectory.
#[derive(Debug, Clone)]
pub struct AnalystInput<'a> {
    /// Already stripped of costs when `cost_visible` is false.
    pub card: TraceCard,
    pub outcome: Outcome,
    pub current_skill: Option<&'a SkillDocument>,
    pub cost_visible: bool,
}

impl<'a> AnalystInput<'a> {
    pub fn new(card: &TraceCard, outcome: Outcome, cost_visible: bool) -> Self {
        Self {
            card: if cost_visible { card.clone() } else { card.strip_costs() },
            outcome,
            current_skill: None,
            cost_visible,
        }
    }

    pub fn trajectory(&self) -> &str {
        &self.card.session_id
    }
}

/// Reviews a successful trajectory and proposes at most one preserve and
/// one prune patch.
pub trait SuccessAnalyst {
    fn analyze(&self, input: &AnalystInput<'_>) -> Vec<Patch>;
}

/// Diagnoses a partial or failed trajectory through a metered oracle and
/// proposes one repair patch. Returning `None` means no diagnosis; the
/// driver then emits a low-confidence patch.
pub trait ErrorAnalyst {
    fn diagnose(&self, input: &AnalystInput<'_>, oracle: &mut OracleSession<'_>) -> Option<Patch>;
}

fn role_phrase(r: RoleHint) -> &'static str {
    match r {
        RoleHint::Planning => "lay out the steps before touching any files",
        RoleHint::ToolCall => "gather inputs with targeted tool calls",
        RoleHint::ErrorRecovery => "retry failed tool calls with corrected arguments",
        RoleHint::FinalReply => "finish with a short reply naming the output",
        RoleHint::Intermediate => "check intermediate results before moving on",
    }
}

fn phase(r: RoleHint) -> u8 {
    match r {
        RoleHint::Planning => 0,
        RoleHint::ToolCall => 1,
        RoleHint::Intermediate => 2,
        RoleHint::ErrorRecovery => 3,
        RoleHint::FinalReply => 4,
    }
}

/// Files that hold agent workspace memory rather than task inputs.
pub const WORKSPACE_MEMORY_FILES: &[&str] = &["MEMORY.md", "SOUL.md"];

/// Template-driven success analyst.
///
/// The preserve rule restates the card's role-hint sequence. A prune is
/// proposed only when costs are visible: for a redundant cluster, it targets
/// the costliest repeat (ties go to the later call), since the first call
/// is the one that did the work; failing that, for a top-cost span whose
/// call reads a workspace-memory file.
#[derive(Debug, Clone, Default)]
pub struct TemplateSuccessAnalyst;

impl SuccessAnalyst for TemplateSuccessAnalyst {
    fn analyze(&self, input: &AnalystInput<'_>) -> Vec<Patch> {
        let card = &input.card;
        let traj = input.trajectory();
        let mut out = Vec::new();

        let mut roles: Vec<RoleHint> = Vec::new();
        for r in card.top_cost_spans.iter().filter_map(|s| s.role_hint) {
            if !roles.contains(&r) {
                roles.push(r);
            }
        }
        // steps read in the order they happen in a run, not in cost order
        roles.sort_by_key(|&r| phase(r));
        if !roles.is_empty() {
            let steps: Vec<&str> = roles.iter().map(|&r| role_phrase(r)).collect();
            let rule = capitalize(&format!("{}.", steps.join(", then ")));
            out.push(Patch::preserve(format!("{traj}/preserve"), traj, rule));
        }

        if input.cost_visible {
            if let Some(p) = cluster_prune(card).or_else(|| memory_prune(card)) {
                out.push(p);
            }
        }
        out
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn cluster_prune(card: &TraceCard) -> Option<Patch> {
    let span_cost = |id: &str| {
        card.top_cost_spans
            .iter()
            .find(|s| s.span_id.as_deref() == Some(id))
            .and_then(|s| s.cost_usd)
            .unwrap_or_default()
    };
    let cluster = card.redundant_tool_calls.first()?;
    let first = cluster.cluster.first()?;
    // max_by_key keeps the last of equal maxima, so ties go to the later call
    let target = cluster.cluster[1..].iter().max_by_key(|id| span_cost(id))?;
    let tool = &cluster.tool;
    let mut p = Patch::prune(
        format!("{}/prune", card.session_id),
        &card.session_id,
        format!("Call {tool} once per target and reuse the result; avoid repeating a call whose arguments barely changed."),
        target.clone(),
        format!(
            "{target} repeats the {tool} call made at {first} with arguments {:.0}% similar; the earlier result already held the content, so skipping the repeat would not change the outcome.",
            cluster.similarity * 100.0
        ),
    );
    p.waste_pattern = Some(WastePattern {
        tool: Some(tool.clone()),
        args_contains: Vec::new(),
        requires_redundant_cluster: true,
    });
    Some(p)
}

fn memory_prune(card: &TraceCard) -> Option<Patch> {
    let (span, file) = card.top_cost_spans.iter().find_map(|s| {
        let sample = s.args_sample.as_deref()?;
        let id = s.span_id.as_deref()?;
        WORKSPACE_MEMORY_FILES
            .iter()
            .find(|f| sample.contains(*f))
            .map(|f| (id, *f))
    })?;
    let mut p = Patch::prune(
        format!("{}/prune", card.session_id),
        &card.session_id,
        "Skip workspace-memory files such as MEMORY.md and SOUL.md; they hold no task input.",
        span,
        format!("{span} spent a turn reading {file}, which carries agent notes rather than task data, so leaving it out would not change the outcome."),
    );
    p.waste_pattern = Some(WastePattern {
        tool: None,
        args_contains: WORKSPACE_MEMORY_FILES.iter().map(|f| f.to_string()).collect(),
        requires_redundant_cluster: false,
    });
    Some(p)
}

const PLACEHOLDERS: &[&str] = &["", "-", "n/a", "na", "tbd", "todo", "pending", "null", "none", "?"];

fn number(s: &str) -> Option<f64> {
    s.trim().trim_end_matches('%').replace(',', "").parse::<f64>().ok()
}

/// Maps a mismatch to a failure type, or `None` when nothing fits.
pub fn classify_mismatch(m: &Mismatch) -> Option<TaxonomyCode> {
    let Some(actual) = m.actual.as_deref() else {
        return Some(TaxonomyCode::T1);
    };
    let expected = m.expected.as_str();
    let (a, e) = (actual.trim(), expected.trim());
    if a.starts_with('=') && !e.starts_with('=') {
        return Some(TaxonomyCode::T3);
    }
    if PLACEHOLDERS.contains(&a.to_lowercase().as_str()) && !PLACEHOLDERS.contains(&e.to_lowercase().as_str()) {
        return Some(TaxonomyCode::T4);
    }
    let squash = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    if actual != expected && squash(actual) == squash(expected) {
        return Some(TaxonomyCode::T5);
    }
    match (number(e), number(a)) {
        (Some(x), Some(y)) => {
            let scale = x.abs().max(1.0);
            if (x - y).abs() <= 0.01 * scale {
                Some(TaxonomyCode::T7)
            } else {
                Some(TaxonomyCode::T6)
            }
        }
        (Some(_), None) => Some(TaxonomyCode::T2),
        _ => None,
    }
}

fn repair_rule(code: TaxonomyCode) -> &'static str {
    match code {
        TaxonomyCode::T1 => "Do not finish until the output file exists and holds every requested cell; re-open it to confirm.",
        TaxonomyCode::T2 => "Write each answer with the type the task asks for: numbers as numbers, dates as dates, never as quoted text.",
        TaxonomyCode::T3 => "Write computed values, not formulas, when the result is read back as values; re-read the saved file to confirm.",
        TaxonomyCode::T4 => "Replace placeholders such as N/A, TBD or pending with the real value before saving.",
        TaxonomyCode::T5 => "Match the expected casing and spacing of text answers exactly; trim stray whitespace.",
        TaxonomyCode::T6 => "Re-derive one row by hand from the source data and compare before filling the rest.",
        TaxonomyCode::T7 => "Keep full precision in intermediate numbers and round only where the task says to.",
    }
}

/// Rule used when no diagnosis was reached.
pub const UNDIAGNOSED_RULE: &str = "Before finishing, compare the produced output against the task's stated requirements item by item.";

fn evidence_for(m: &Mismatch) -> String {
    match &m.actual {
        Some(a) => format!("{}: expected {:?}, produced {:?}", m.item, m.expected, a),
        None => format!("{}: expected {:?}, nothing produced", m.item, m.expected),
    }
}

/// Template-driven error analyst: one mismatch inspection, classify the
/// first mismatch, emit a high-confidence templated repair. When nothing
/// classifies it keeps reading gold snippets until the budget runs out and
/// gives up.
#[derive(Debug, Clone, Default)]
pub struct TemplateErrorAnalyst;

impl ErrorAnalyst for TemplateErrorAnalyst {
    fn diagnose(&self, input: &AnalystInput<'_>, oracle: &mut OracleSession<'_>) -> Option<Patch> {
        let traj = input.trajectory();
        let mismatches = oracle.inspect_mismatches().ok()?;
        if let Some((m, code)) = mismatches.iter().find_map(|m| classify_mismatch(m).map(|c| (m, c))) {
            return Some(Patch::repair(
                format!("{traj}/repair"),
                traj,
                repair_rule(code),
                Some(code),
                evidence_for(m),
                Confidence::High,
            ));
        }
        let item = mismatches.first().map(|m| m.item.clone()).unwrap_or_default();
        loop {
            match oracle.read_gold_snippet(&item) {
                Err(LookupError::BudgetExhausted) => return None,
                Err(LookupError::Oracle(_)) if oracle.unavailable() => return None,
                _ => continue,
            }
        }
    }
}

/// Result of one metered error analysis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorAnalysis {
    pub patch: Patch,
    pub lookups_used: u32,
    pub budget_exhausted: bool,
}

/// Runs `analyst` against `oracle` under `budget` and enforces the
/// contract: the result is always one repair patch with evidence; a refused
/// lookup or a missing diagnosis forces low confidence; an unavailable
/// oracle is recorded as the evidence.
pub fn run_error_analyst(
    analyst: &dyn ErrorAnalyst,
    input: &AnalystInput<'_>,
    oracle: &dyn Oracle,
    budget: OracleBudget,
) -> ErrorAnalysis {
    let traj = input.trajectory().to_string();
    let mut session = OracleSession::new(oracle, &traj, budget);
    let proposed = analyst.diagnose(input, &mut session);
    let mut patch = match proposed {
        Some(p) if p.action == Action::Repair && !p.rule.trim().is_empty() => p,
        _ => Patch::repair(
            format!("{traj}/repair"),
            &traj,
            UNDIAGNOSED_RULE,
            None,
            format!("no diagnosis within {} oracle lookups", session.lookups_used()),
            Confidence::Low,
        ),
    };
    patch.source_trajectory = traj;
    if session.exhausted() {
        patch.confidence = Confidence::Low;
    }
    if session.unavailable() {
        patch.confidence = Confidence::Low;
        patch.evidence = Some("oracle unavailable".into());
    }
    if patch.evidence.as_deref().is_none_or(|e| e.trim().is_empty()) {
        patch.evidence = Some("no evidence recorded".into());
    }
    ErrorAnalysis {
        lookups_used: session.lookups_used(),
        budget_exhausted: session.exhausted(),
        patch,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(expected: &str, actual: Option<&str>) -> Mismatch {
        Mismatch {
            item: "B2".into(),
            expected: expected.into(),
            actual: actual.map(str::to_string),
        }
    }

    #[test]
    fn mismatch_classes() {
        assert_eq!(classify_mismatch(&m("12", None)), Some(TaxonomyCode::T1));
        assert_eq!(classify_mismatch(&m("42", Some("=SUM(A1:A3)"))), Some(TaxonomyCode::T3));
        assert_eq!(classify_mismatch(&m("Paid", Some("N/A"))), Some(TaxonomyCode::T4));
        assert_eq!(classify_mismatch(&m("North East", Some("north  east"))), Some(TaxonomyCode::T5));
        assert_eq!(classify_mismatch(&m("3.14159", Some("3.14"))), Some(TaxonomyCode::T7));
        assert_eq!(classify_mismatch(&m("100", Some("250"))), Some(TaxonomyCode::T6));
        assert_eq!(classify_mismatch(&m("100", Some("one hundred"))), Some(TaxonomyCode::T2));
        assert_eq!(classify_mismatch(&m("approved", Some("rejected"))), None);
    }

    #[test]
    fn repair_rules_carry_no_caps() {
        for code in TaxonomyCode::ALL {
            assert!(!super::super::patch::has_hard_cap(repair_rule(code)));
        }
    }
}
