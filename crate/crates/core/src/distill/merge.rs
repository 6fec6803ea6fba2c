//! Conflict-aware priority fold of admitted patches into a skill document.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use crate::similarity::normalized_similarity;

use super::patch::{Action, Admitted, Confidence, Patch, TaxonomyCode};
use super::skill::{post_check, SectionName, SkillDocument, SkillRule, Violation, TOKEN_CEILING};

#[derive(Debug, Clone)]
pub struct MergeConfig {
    pub title: String,
    /// Task-family description; becomes the Trigger section.
    pub trigger: Vec<String>,
    /// Rules at least this similar are treated as one rule.
    pub near_duplicate: f64,
    /// Opposite-polarity rules at least this similar conflict.
    pub conflict_similarity: f64,
    /// Distinct trajectories a preserve rule needs to survive.
    pub min_preserve_trajectories: usize,
    pub denylist: Vec<String>,
    pub token_ceiling: usize,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            title: "Skill".into(),
            trigger: vec!["Use for spreadsheet tasks that read an input workbook and write computed results.".into()],
            near_duplicate: 0.9,
            conflict_similarity: 0.6,
            min_preserve_trajectories: 2,
            denylist: Vec::new(),
            token_ceiling: TOKEN_CEILING,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("skill document failed post-checks: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct PostCheckFailure {
    pub violations: Vec<Violation>,
    /// The document as assembled, for inspection.
    pub document: SkillDocument,
}

/// Whether a rule is phrased as something not to do.
pub fn is_negative(rule: &str) -> bool {
    let lower = rule.to_lowercase();
    lower
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .any(|w| matches!(w, "avoid" | "don't" | "never" | "skip" | "refrain"))
        || lower.contains("do not")
}

fn similar(a: &Patch, b: &Patch) -> f64 {
    normalized_similarity(&a.rule.to_lowercase(), &b.rule.to_lowercase())
}

/// Two patches conflict when their rules are similar but of opposite
/// polarity, or when they target the same span.
pub fn conflicts(a: &Patch, b: &Patch, config: &MergeConfig) -> bool {
    if let (Some(x), Some(y)) = (&a.target_span, &b.target_span) {
        if x == y && a.source_trajectory == b.source_trajectory {
            return true;
        }
    }
    is_negative(&a.rule) != is_negative(&b.rule) && similar(a, b) >= config.conflict_similarity
}

/// Conflict precedence: action, then confidence, then earlier trajectory,
/// then id.
fn precedence(a: &Patch, b: &Patch) -> Ordering {
    b.action
        .rank()
        .cmp(&a.action.rank())
        .then_with(|| b.confidence.rank().cmp(&a.confidence.rank()))
        .then_with(|| a.source_trajectory.cmp(&b.source_trajectory))
        .then_with(|| a.id.cmp(&b.id))
        .then_with(|| a.rule.cmp(&b.rule))
}

/// Display order inside a section: confident repairs, prunes,
/// low-confidence repairs, preserves.
fn display_tier(p: &Patch) -> u8 {
    match (p.action, p.confidence) {
        (Action::Repair, Confidence::Low) => 2,
        (Action::Repair, _) => 0,
        (Action::Prune, _) => 1,
        (Action::Preserve, _) => 3,
    }
}

pub fn section_for(p: &Patch) -> SectionName {
    match p.action {
        Action::Preserve => SectionName::Workflow,
        Action::Prune => SectionName::CostControl,
        Action::Repair => match p.failure_type {
            Some(TaxonomyCode::T2 | TaxonomyCode::T4 | TaxonomyCode::T5 | TaxonomyCode::T7) => {
                SectionName::ArtifactChecklist
            }
            Some(TaxonomyCode::T6) => SectionName::Workflow,
            Some(TaxonomyCode::T1 | TaxonomyCode::T3) | None => SectionName::StopRules,
        },
    }
}

struct Candidate {
    patch: Patch,
    provenance: Vec<String>,
}

/// Outcome of the fold before post-checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeTrace {
    pub document: SkillDocument,
    /// Preserve ids dropped for appearing in too few trajectories.
    pub singleton_preserves: Vec<String>,
    /// (loser id, winner id) for every conflict.
    pub conflicts: Vec<(String, String)>,
    /// (duplicate id, kept id) for every near-duplicate folded away.
    pub duplicates: Vec<(String, String)>,
}

/// Folds patches into a document without running post-checks.
pub fn fold(patches: &[Admitted], config: &MergeConfig) -> MergeTrace {
    let mut all: Vec<Patch> = patches.iter().map(|a| a.patch().clone()).collect();
    all.sort_by(precedence);

    // group preserves by near-duplicate rule text; keep groups seen in enough
    // distinct trajectories
    let mut groups: Vec<(Patch, Vec<String>, BTreeSet<String>)> = Vec::new();
    let mut candidates: Vec<Candidate> = Vec::new();
    for p in all {
        if p.action != Action::Preserve {
            candidates.push(Candidate {
                provenance: vec![p.id.clone()],
                patch: p,
            });
            continue;
        }
        match groups
            .iter_mut()
            .find(|(rep, _, _)| similar(rep, &p) >= config.near_duplicate)
        {
            Some((_, ids, trajs)) => {
                ids.push(p.id.clone());
                trajs.insert(p.source_trajectory.clone());
            }
            None => {
                let trajs = BTreeSet::from([p.source_trajectory.clone()]);
                groups.push((p.clone(), vec![p.id.clone()], trajs));
            }
        }
    }
    let mut singleton_preserves = Vec::new();
    for (rep, ids, trajs) in groups {
        if trajs.len() >= config.min_preserve_trajectories {
            candidates.push(Candidate {
                patch: rep,
                provenance: ids,
            });
        } else {
            singleton_preserves.extend(ids);
        }
    }
    candidates.sort_by(|a, b| precedence(&a.patch, &b.patch));

    let mut kept: Vec<Candidate> = Vec::new();
    let mut conflict_log = Vec::new();
    let mut duplicates = Vec::new();
    for c in candidates {
        if let Some(w) = kept.iter().find(|k| conflicts(&k.patch, &c.patch, config)) {
            conflict_log.push((c.patch.id.clone(), w.patch.id.clone()));
            continue;
        }
        if let Some(w) = kept
            .iter_mut()
            .find(|k| similar(&k.patch, &c.patch) >= config.near_duplicate)
        {
            duplicates.push((c.patch.id.clone(), w.patch.id.clone()));
            w.provenance.extend(c.provenance);
            continue;
        }
        kept.push(c);
    }

    kept.sort_by(|a, b| {
        display_tier(&a.patch)
            .cmp(&display_tier(&b.patch))
            .then_with(|| precedence(&a.patch, &b.patch))
    });
    let mut document = SkillDocument::empty(&config.title);
    if let Some(trigger) = document.section_mut(SectionName::Trigger) {
        trigger.rules = config
            .trigger
            .iter()
            .map(|t| SkillRule {
                text: t.clone(),
                provenance: Vec::new(),
            })
            .collect();
    }
    for c in kept {
        let mut provenance = c.provenance;
        provenance.sort();
        provenance.dedup();
        if let Some(section) = document.section_mut(section_for(&c.patch)) {
            section.rules.push(SkillRule {
                text: c.patch.rule.clone(),
                provenance,
            });
        }
    }
    MergeTrace {
        document,
        singleton_preserves,
        conflicts: conflict_log,
        duplicates,
    }
}

/// Merges admitted patches into a skill document and runs the post-checks.
pub fn merge(patches: &[Admitted], config: &MergeConfig) -> Result<SkillDocument, PostCheckFailure> {
    let document = fold(patches, config).document;
    let violations = post_check(&document, &config.denylist, config.token_ceiling);
    if violations.is_empty() {
        Ok(document)
    } else {
        Err(PostCheckFailure { violations, document })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polarity_markers() {
        assert!(is_negative("Avoid re-reading files."));
        assert!(is_negative("Do not finish early."));
        assert!(is_negative("Skip memory files."));
        assert!(!is_negative("Read each file once."));
        assert!(!is_negative("Check the avoidance list."));
    }
}
