//! Skill distillation: analysts propose preserve/prune/repair patches from
//! trace cards, prunes pass an admission gate, and a priority fold merges
//! the survivors into a five-section skill document.

mod analyst;
mod merge;
mod oracle;
mod patch;
mod skill;

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

pub use analyst::{
    classify_mismatch, run_error_analyst, AnalystInput, ErrorAnalysis, ErrorAnalyst, SuccessAnalyst, TemplateErrorAnalyst,
    TemplateSuccessAnalyst, UNDIAGNOSED_RULE, WORKSPACE_MEMORY_FILES,
};
pub use merge::{conflicts, fold, is_negative, merge, section_for, MergeConfig, MergeTrace, PostCheckFailure};
pub use oracle::{
    LookupError, Mismatch, Oracle, OracleBudget, OracleError, OracleSession, RecordedOracle, TaskRecord,
    DEFAULT_ORACLE_BUDGET,
};
pub use patch::{
    admit_prune, has_hard_cap, prune_rule_matches, Action, Admitted, Confidence, GateConfig, Patch, PatchError,
    Rejection, TaxonomyCode, WastePattern, HARD_CAP_PATTERNS, MIN_COUNTERFACTUAL_CHARS,
};
pub use skill::{
    post_check, post_check_markdown, token_estimate, Section, SectionName, SkillDocument, SkillRule, Violation,
    TOKEN_CEILING,
};

use crate::card::TraceCard;
use crate::event::Outcome;

/// Experimental conditions: the baseline and the full pipeline with each
/// signal removed in turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Baseline,
    Full,
    NoPrune,
    NoCostAttr,
    NoCf,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::Baseline,
        Condition::Full,
        Condition::NoPrune,
        Condition::NoCostAttr,
        Condition::NoCf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Baseline => "baseline",
            Condition::Full => "full",
            Condition::NoPrune => "no_prune",
            Condition::NoCostAttr => "no_cost_attr",
            Condition::NoCf => "no_cf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }

    /// Whether the condition runs distillation at all.
    pub fn distills(self) -> bool {
        self != Condition::Baseline
    }

    /// Analysts see USD figures on cards.
    pub fn cost_visible(self) -> bool {
        self != Condition::NoCostAttr
    }

    /// Prune patches reach the merge.
    pub fn keeps_prunes(self) -> bool {
        self != Condition::NoPrune
    }

    pub fn gate(self) -> GateConfig {
        GateConfig {
            require_counterfactual: self != Condition::NoCf,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A compiled card with its graded outcome.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub card: TraceCard,
    pub outcome: Outcome,
}

/// The fate of one proposed patch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PatchDecision {
    pub patch: Patch,
    pub admitted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DistillRun {
    pub condition: Condition,
    pub decisions: Vec<PatchDecision>,
    pub oracle_lookups: u32,
    pub diagnostics: Vec<String>,
    #[serde(skip)]
    pub admitted: Vec<Admitted>,
}

impl DistillRun {
    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("distillation runs serialize")
    }
}

pub struct Distiller<'a> {
    pub success: &'a dyn SuccessAnalyst,
    pub error: &'a dyn ErrorAnalyst,
    pub oracle: &'a dyn Oracle,
    pub budget: OracleBudget,
}

/// Turns the conditions' card views into analyst patches and filters them
/// through the gate. `extra` patches (for example from an external
/// analyst) go through the same gate, judged against their trajectory's
/// card.
pub fn collect_patches(
    trajectories: &[Trajectory],
    extra: &[Patch],
    condition: Condition,
    distiller: &Distiller<'_>,
) -> DistillRun {
    let mut run = DistillRun {
        condition,
        decisions: Vec::new(),
        oracle_lookups: 0,
        diagnostics: Vec::new(),
        admitted: Vec::new(),
    };
    if !condition.distills() {
        return run;
    }
    let mut views: BTreeMap<&str, TraceCard> = BTreeMap::new();
    let mut proposed = Vec::new();
    for t in trajectories {
        let input = AnalystInput::new(&t.card, t.outcome, condition.cost_visible());
        match t.outcome {
            Outcome::Success => {
                let patches = distiller.success.analyze(&input);
                let (preserves, prunes) = (
                    patches.iter().filter(|p| p.action == Action::Preserve).count(),
                    patches.iter().filter(|p| p.action == Action::Prune).count(),
                );
                if preserves > 1 || prunes > 1 || patches.iter().any(|p| p.action == Action::Repair) {
                    run.diagnostics.push(format!(
                        "{}: success analyst returned an invalid patch set; dropped",
                        t.card.session_id
                    ));
                } else {
                    proposed.extend(patches);
                }
            }
            Outcome::Partial | Outcome::Fail => {
                let analysis = run_error_analyst(distiller.error, &input, distiller.oracle, distiller.budget);
                run.oracle_lookups += analysis.lookups_used;
                if analysis.budget_exhausted {
                    run.diagnostics
                        .push(format!("{}: oracle budget exhausted", t.card.session_id));
                }
                proposed.push(analysis.patch);
            }
        }
        views.insert(&t.card.session_id, input.card);
    }
    proposed.extend(extra.iter().cloned());

    for patch in proposed {
        let verdict = if patch.action == Action::Prune {
            if !condition.keeps_prunes() {
                Err("prune patches are discarded under this condition".to_string())
            } else {
                match views.get(patch.source_trajectory.as_str()) {
                    Some(card) => admit_prune(&patch, card, condition.gate()).map_err(|r| r.to_string()),
                    None => Err(Rejection::UnknownTarget(patch.target_span.clone()).to_string()),
                }
            }
        } else {
            Admitted::non_prune(patch.clone()).map_err(|e| e.to_string())
        };
        match verdict {
            Ok(a) => {
                run.admitted.push(a);
                run.decisions.push(PatchDecision {
                    patch,
                    admitted: true,
                    reason: None,
                });
            }
            Err(reason) => run.decisions.push(PatchDecision {
                patch,
                admitted: false,
                reason: Some(reason),
            }),
        }
    }
    run
}

/// Runs the full distillation for one condition. The baseline produces no
/// document. Every trajectory's session id is added to the leakage
/// denylist.
pub fn distill(
    trajectories: &[Trajectory],
    extra: &[Patch],
    condition: Condition,
    distiller: &Distiller<'_>,
    config: &MergeConfig,
) -> (DistillRun, Option<Result<SkillDocument, PostCheckFailure>>) {
    let run = collect_patches(trajectories, extra, condition, distiller);
    if !condition.distills() {
        return (run, None);
    }
    let mut config = config.clone();
    config
        .denylist
        .extend(trajectories.iter().map(|t| t.card.session_id.clone()));
    let doc = merge(&run.admitted, &config);
    (run, Some(doc))
}

/// Instruction texts for wiring live model-backed analysts in place of the
/// template implementations.
pub mod prompts {
    pub const SUCCESS_ANALYST: &str = include_str!("../../assets/prompts/success_analyst.md");
    pub const ERROR_ANALYST: &str = include_str!("../../assets/prompts/error_analyst.md");
    pub const MERGE: &str = include_str!("../../assets/prompts/merge.md");
}
