//! Patches and the prune admission gate.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::card::TraceCard;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Preserve,
    Prune,
    Repair,
}

impl Action {
    /// Conflict precedence: repair > prune > preserve.
    pub fn rank(self) -> u8 {
        match self {
            Action::Preserve => 0,
            Action::Prune => 1,
            Action::Repair => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Preserve => "preserve",
            Action::Prune => "prune",
            Action::Repair => "repair",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    High,
    Medium,
    Low,
}

impl Confidence {
    pub fn rank(self) -> u8 {
        match self {
            Confidence::Low => 0,
            Confidence::Medium => 1,
            Confidence::High => 2,
        }
    }
}

/// Failure taxonomy for repair patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaxonomyCode {
    T1,
    T2,
    T3,
    T4,
    T5,
    T6,
    T7,
}

impl TaxonomyCode {
    pub const ALL: [TaxonomyCode; 7] = [
        TaxonomyCode::T1,
        TaxonomyCode::T2,
        TaxonomyCode::T3,
        TaxonomyCode::T4,
        TaxonomyCode::T5,
        TaxonomyCode::T6,
        TaxonomyCode::T7,
    ];

    pub fn description(self) -> &'static str {
        match self {
            TaxonomyCode::T1 => "no deliverable",
            TaxonomyCode::T2 => "wrong content type",
            TaxonomyCode::T3 => "formula not evaluated",
            TaxonomyCode::T4 => "placeholder mismatch",
            TaxonomyCode::T5 => "case/whitespace",
            TaxonomyCode::T6 => "logic error",
            TaxonomyCode::T7 => "precision rounding",
        }
    }
}

/// Machine-checkable description of the waste a prune rule targets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WastePattern {
    /// Tool name the pattern applies to; `None` matches any tool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
    /// Case-insensitive substrings, any of which must occur in an
    /// args sample. Empty means no argument constraint.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub args_contains: Vec<String>,
    /// The card must carry a redundant cluster on the tool.
    #[serde(default)]
    pub requires_redundant_cluster: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub id: String,
    pub action: Action,
    pub rule: String,
    pub source_trajectory: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_span: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterfactual: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_type: Option<TaxonomyCode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<String>,
    pub confidence: Confidence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waste_pattern: Option<WastePattern>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PatchError {
    #[error("patch {0}: rule text is empty")]
    EmptyRule(String),
    #[error("patch {0}: prune patches need a target_span")]
    MissingTarget(String),
    #[error("patch {0}: prune patches need a counterfactual")]
    MissingCounterfactual(String),
    #[error("patch {0}: repair patches need evidence")]
    MissingEvidence(String),
    #[error("patch {0}: prune patches must pass the admission gate")]
    UnadmittedPrune(String),
}

impl Patch {
    pub fn preserve(id: impl Into<String>, trajectory: impl Into<String>, rule: impl Into<String>) -> Self {
        Self::bare(id, Action::Preserve, trajectory, rule, Confidence::Medium)
    }

    pub fn prune(
        id: impl Into<String>,
        trajectory: impl Into<String>,
        rule: impl Into<String>,
        target_span: impl Into<String>,
        counterfactual: impl Into<String>,
    ) -> Self {
        Patch {
            target_span: Some(target_span.into()),
            counterfactual: Some(counterfactual.into()),
            ..Self::bare(id, Action::Prune, trajectory, rule, Confidence::Medium)
        }
    }

    pub fn repair(
        id: impl Into<String>,
        trajectory: impl Into<String>,
        rule: impl Into<String>,
        failure_type: Option<TaxonomyCode>,
        evidence: impl Into<String>,
        confidence: Confidence,
    ) -> Self {
        Patch {
            failure_type,
            evidence: Some(evidence.into()),
            ..Self::bare(id, Action::Repair, trajectory, rule, confidence)
        }
    }

    fn bare(
        id: impl Into<String>,
        action: Action,
        trajectory: impl Into<String>,
        rule: impl Into<String>,
        confidence: Confidence,
    ) -> Self {
        Patch {
            id: id.into(),
            action,
            rule: rule.into(),
            source_trajectory: trajectory.into(),
            target_span: None,
            counterfactual: None,
            failure_type: None,
            evidence: None,
            confidence,
            waste_pattern: None,
        }
    }

    /// Checks the structural invariants of the patch's action.
    pub fn validate(&self) -> Result<(), PatchError> {
        if self.rule.trim().is_empty() {
            return Err(PatchError::EmptyRule(self.id.clone()));
        }
        match self.action {
            Action::Prune if self.target_span.is_none() => Err(PatchError::MissingTarget(self.id.clone())),
            Action::Prune if self.counterfactual.is_none() => {
                Err(PatchError::MissingCounterfactual(self.id.clone()))
            }
            Action::Repair if self.evidence.as_deref().is_none_or(|e| e.trim().is_empty()) => {
                Err(PatchError::MissingEvidence(self.id.clone()))
            }
            _ => Ok(()),
        }
    }
}

/// Minimum counterfactual length, in characters, for a prune to be
/// admitted.
pub const MIN_COUNTERFACTUAL_CHARS: usize = 20;

/// Phrasings that turn a prune rule into a hard budget instead of a
/// behaviour to avoid.
pub const HARD_CAP_PATTERNS: &[&str] = &[
    r"\$\s*\d",
    r"\b\d+(\.\d+)?\s*(usd|dollars?|cents?)\b",
    r"\bat most\s+\d+",
    r"\bfewer than\s+\d+",
    r"\bno more than\s+\d+",
];

fn hard_cap_regexes() -> &'static [Regex] {
    static RES: OnceLock<Vec<Regex>> = OnceLock::new();
    RES.get_or_init(|| {
        HARD_CAP_PATTERNS
            .iter()
            .map(|p| Regex::new(&format!("(?i){p}")).expect("cap patterns compile"))
            .collect()
    })
}

/// Whether `text` phrases a hard cost or count cap.
pub fn has_hard_cap(text: &str) -> bool {
    hard_cap_regexes().iter().any(|r| r.is_match(text))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateConfig {
    /// Condition (b): the counterfactual must be substantive.
    pub require_counterfactual: bool,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            require_counterfactual: true,
        }
    }
}

/// Why a prune was not admitted.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Rejection {
    #[error("not a prune patch")]
    NotPrune,
    #[error("(a) target span {0:?} is not listed on the card")]
    UnknownTarget(Option<String>),
    #[error("(b) counterfactual shorter than {MIN_COUNTERFACTUAL_CHARS} characters")]
    WeakCounterfactual,
    #[error("(c) rule states a hard cap")]
    HardCap,
}

impl Rejection {
    /// The admission condition that failed, if any.
    pub fn condition(&self) -> Option<char> {
        match self {
            Rejection::NotPrune => None,
            Rejection::UnknownTarget(_) => Some('a'),
            Rejection::WeakCounterfactual => Some('b'),
            Rejection::HardCap => Some('c'),
        }
    }
}

/// A patch cleared for merging. Prunes can only get here through
/// [`admit_prune`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Admitted(Patch);

impl Admitted {
    /// Admits a preserve or repair patch that satisfies its invariants.
    pub fn non_prune(patch: Patch) -> Result<Admitted, PatchError> {
        if patch.action == Action::Prune {
            return Err(PatchError::UnadmittedPrune(patch.id));
        }
        patch.validate()?;
        Ok(Admitted(patch))
    }

    pub fn patch(&self) -> &Patch {
        &self.0
    }

    pub fn into_patch(self) -> Patch {
        self.0
    }
}

impl std::ops::Deref for Admitted {
    type Target = Patch;
    fn deref(&self) -> &Patch {
        &self.0
    }
}

/// Admits a prune when (a) its target is a top-cost span or redundant
/// cluster member on `card`, (b) it argues a counterfactual of at least
/// [`MIN_COUNTERFACTUAL_CHARS`] characters (skipped when the gate is
/// off), and (c) its rule states no hard cap.
pub fn admit_prune(patch: &Patch, card: &TraceCard, gate: GateConfig) -> Result<Admitted, Rejection> {
    if patch.action != Action::Prune || patch.rule.trim().is_empty() {
        return Err(Rejection::NotPrune);
    }
    match patch.target_span.as_deref() {
        Some(t) if card.names_span(t) => {}
        other => return Err(Rejection::UnknownTarget(other.map(str::to_string))),
    }
    if gate.require_counterfactual {
        let len = patch.counterfactual.as_deref().map_or(0, |c| c.trim().chars().count());
        if len < MIN_COUNTERFACTUAL_CHARS {
            return Err(Rejection::WeakCounterfactual);
        }
    }
    if has_hard_cap(&patch.rule) {
        return Err(Rejection::HardCap);
    }
    Ok(Admitted(patch.clone()))
}

/// Whether `card` exhibits the waste pattern of prune `rule`.
pub fn prune_rule_matches(rule: &Patch, card: &TraceCard) -> bool {
    let Some(pattern) = rule.waste_pattern.as_ref().filter(|_| rule.action == Action::Prune) else {
        return false;
    };
    let tool_ok = |name: &str| pattern.tool.as_deref().is_none_or(|t| t == name);
    if pattern.requires_redundant_cluster {
        return card.redundant_tool_calls.iter().any(|c| tool_ok(&c.tool));
    }
    let needles: Vec<String> = pattern.args_contains.iter().map(|n| n.to_lowercase()).collect();
    card.top_cost_spans.iter().any(|s| {
        let Some(sample) = s.args_sample.as_deref() else {
            return false;
        };
        let called_tool = sample.split('(').next().unwrap_or("");
        let lower = sample.to_lowercase();
        tool_ok(called_tool) && (needles.is_empty() || needles.iter().any(|n| lower.contains(n)))
    })
}
