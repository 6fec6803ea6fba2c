//! Patch-set enumeration for the merge laws: twelve templates from
//! {preserve, prune, repair} × {singleton, duplicated} × {conflicting,
//! independent}, up to six templates per set.
#![allow(dead_code)]

use std::collections::BTreeSet;

use tracecard::card::{parse_yaml, TraceCard};
use tracecard::distill::{
    admit_prune, fold, merge, post_check_markdown, Action, Admitted, Confidence, GateConfig, MergeConfig, Patch,
    SectionName, TaxonomyCode,
};

pub const CARD: &str = include_str!("../fixtures/reference_card.yaml");

// The conflicting topic: the repair restates the preserve and negates the
// prune.
pub const PRESERVE_TOPIC: &str = "Re-read the input workbook before writing each result column.";
pub const PRUNE_TOPIC: &str = "Do not re-read the input workbook before writing each result column.";
pub const REPAIR_TOPIC: &str = "Re-read the input workbook before writing each result column!";

pub const PRESERVE_OWN: &str = "List the data directory first to locate every input file.";
pub const PRUNE_OWN: &str = "Skip opening workspace memory notes when the task names its inputs.";
pub const REPAIR_OWN: &str = "Confirm that formulas evaluate to numbers before saving.";

pub const COUNTERFACTUAL: &str = "the second read returned identical content, so the outcome is unchanged";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub action: Action,
    pub duplicated: bool,
    pub conflicting: bool,
}

pub fn templates() -> Vec<Template> {
    let mut out = Vec::new();
    for action in [Action::Preserve, Action::Prune, Action::Repair] {
        for duplicated in [false, true] {
            for conflicting in [false, true] {
                out.push(Template {
                    action,
                    duplicated,
                    conflicting,
                });
            }
        }
    }
    out
}

pub fn rule(t: Template) -> &'static str {
    match (t.action, t.conflicting) {
        (Action::Preserve, true) => PRESERVE_TOPIC,
        (Action::Prune, true) => PRUNE_TOPIC,
        (Action::Repair, true) => REPAIR_TOPIC,
        (Action::Preserve, false) => PRESERVE_OWN,
        (Action::Prune, false) => PRUNE_OWN,
        (Action::Repair, false) => REPAIR_OWN,
    }
}

/// Each template instance gets its own trajectory namespace so two
/// instances of the same template (singleton and duplicated) never share a
/// trajectory.
pub fn instantiate(t: Template, slot: usize, card: &TraceCard) -> Vec<Admitted> {
    let trajectories: Vec<String> = if t.duplicated {
        vec![format!("traj-{slot}-a"), format!("traj-{slot}-b")]
    } else {
        vec![format!("traj-{slot}-a")]
    };
    trajectories
        .iter()
        .map(|traj| {
            let id = format!("{traj}/{}", t.action.as_str());
            match t.action {
                Action::Preserve => Admitted::non_prune(Patch::preserve(id, traj, rule(t))).unwrap(),
                Action::Repair => {
                    let code = if t.conflicting { TaxonomyCode::T4 } else { TaxonomyCode::T3 };
                    Admitted::non_prune(Patch::repair(id, traj, rule(t), Some(code), "mismatch on B2", Confidence::High))
                        .unwrap()
                }
                Action::Prune => {
                    let target = if t.conflicting { "span-7" } else { "span-3" };
                    let p = Patch::prune(id, traj, rule(t), target, COUNTERFACTUAL);
                    admit_prune(&p, card, GateConfig::default()).unwrap()
                }
            }
        })
        .collect()
}

/// Rule texts the fold must keep, derived from the priority laws alone.
pub fn expected_rules(set: &[Template]) -> BTreeSet<&'static str> {
    let has = |f: &dyn Fn(&Template) -> bool| set.iter().any(f);
    let mut out = BTreeSet::new();
    // independent rules: preserves need two trajectories
    if has(&|t| t.action == Action::Preserve && !t.conflicting && t.duplicated) {
        out.insert(PRESERVE_OWN);
    }
    if has(&|t| t.action == Action::Prune && !t.conflicting) {
        out.insert(PRUNE_OWN);
    }
    if has(&|t| t.action == Action::Repair && !t.conflicting) {
        out.insert(REPAIR_OWN);
    }
    // the conflicting topic: the highest-ranked surviving action wins
    if has(&|t| t.action == Action::Repair && t.conflicting) {
        out.insert(REPAIR_TOPIC);
    } else if has(&|t| t.action == Action::Prune && t.conflicting) {
        out.insert(PRUNE_TOPIC);
    } else if has(&|t| t.action == Action::Preserve && t.conflicting && t.duplicated) {
        out.insert(PRESERVE_TOPIC);
    }
    out
}

pub fn subsets(n: usize, max: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize <= max)
        .map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect())
        .collect()
}

pub fn config() -> MergeConfig {
    MergeConfig {
        denylist: vec!["sb-task-47484".into(), "input.xlsx".into()],
        ..MergeConfig::default()
    }
}

/// Checks every patch set of up to six templates against the priority
/// laws and post-checks; panics on the first violation. Returns the number
/// of sets checked.
pub fn check_exhaustive() -> usize {
    let card = parse_yaml(CARD).unwrap();
    let templates = templates();
    let config = config();
    let mut checked = 0;
    for set in subsets(templates.len(), 6) {
        let chosen: Vec<Template> = set.iter().map(|&i| templates[i]).collect();
        let patches: Vec<Admitted> = set
            .iter()
            .flat_map(|&i| instantiate(templates[i], i, &card))
            .collect();
        let trace = fold(&patches, &config);
        let doc = &trace.document;

        let got: BTreeSet<&str> = doc
            .sections
            .iter()
            .filter(|s| s.name != SectionName::Trigger)
            .flat_map(|s| s.rules.iter().map(|r| r.text.as_str()))
            .collect();
        assert_eq!(got, expected_rules(&chosen), "set {chosen:?}");
        assert_eq!(doc.rule_count() - 1, got.len(), "duplicate bullets in {chosen:?}");

        // Cost control holds exactly the surviving prune rules
        let cost_control: BTreeSet<&str> = doc
            .section(SectionName::CostControl)
            .unwrap()
            .rules
            .iter()
            .map(|r| r.text.as_str())
            .collect();
        let prune_rules: BTreeSet<&str> = got.iter().copied().filter(|r| *r == PRUNE_TOPIC || *r == PRUNE_OWN).collect();
        assert_eq!(cost_control, prune_rules, "set {chosen:?}");

        // every single-trajectory preserve is reported as dropped
        for (i, t) in set.iter().map(|&i| (i, templates[i])) {
            let twin = Template { duplicated: true, ..t };
            if t.action == Action::Preserve && !t.duplicated && !chosen.contains(&twin) {
                assert!(trace.singleton_preserves.contains(&format!("traj-{i}-a/preserve")));
            }
        }

        // input order does not matter
        let mut reversed = patches.clone();
        reversed.reverse();
        assert_eq!(fold(&reversed, &config).document, trace.document);

        let merged = merge(&patches, &config).unwrap();
        assert_eq!(&merged, doc);
        assert!(post_check_markdown(&merged.to_markdown(), &config.denylist, config.token_ceiling).is_empty());
        checked += 1;
    }
    checked
}

