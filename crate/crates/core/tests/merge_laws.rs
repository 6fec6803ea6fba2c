//! Exhaustive merge checks over every patch set built from twelve templates.

use std::time::Instant;

use tracecard::distill::{is_negative, merge, post_check_markdown, Admitted, Confidence, Patch, Violation};
use tracecard::similarity::normalized_similarity;

#[path = "support/merge_fixture.rs"]
mod merge_fixture;
use merge_fixture::*;

#[test]
fn fixture_texts_have_intended_relations() {
    let c = config();
    let sim = normalized_similarity;
    assert!(sim(&PRESERVE_TOPIC.to_lowercase(), &REPAIR_TOPIC.to_lowercase()) >= c.near_duplicate);
    assert!(sim(&PRESERVE_TOPIC.to_lowercase(), &PRUNE_TOPIC.to_lowercase()) >= c.conflict_similarity);
    assert!(sim(&REPAIR_TOPIC.to_lowercase(), &PRUNE_TOPIC.to_lowercase()) >= c.conflict_similarity);
    assert!(is_negative(PRUNE_TOPIC) && is_negative(PRUNE_OWN));
    assert!(!is_negative(PRESERVE_TOPIC) && !is_negative(REPAIR_TOPIC));
    assert!(!is_negative(PRESERVE_OWN) && !is_negative(REPAIR_OWN));
    let all = [PRESERVE_TOPIC, PRUNE_TOPIC, REPAIR_TOPIC, PRESERVE_OWN, PRUNE_OWN, REPAIR_OWN];
    for own in [PRESERVE_OWN, PRUNE_OWN, REPAIR_OWN] {
        for other in all.iter().filter(|o| **o != own) {
            assert!(sim(&own.to_lowercase(), &other.to_lowercase()) < c.conflict_similarity);
        }
    }
}

#[test]
fn exhaustive_merge_laws() {
    let started = Instant::now();
    let checked = check_exhaustive();
    // sum of C(12, k) for k = 0..=6
    assert_eq!(checked, 1 + 12 + 66 + 220 + 495 + 792 + 924);
    assert!(started.elapsed().as_secs() < 10);
}

#[test]
fn oversize_document_fails_token_ceiling() {
    let patches: Vec<Admitted> = (0..120)
        .map(|i| {
            const WORDS: [&str; 8] = ["ledger", "pivot", "quarter", "margin", "sheet", "region", "vendor", "audit"];
            let words: Vec<&str> = (0..10).map(|k| WORDS[(i * 7 + k * k * 3 + i / (k + 1)) % 8]).collect();
            let rule = format!("Rule {i}: {}.", words.join(" "));
            Admitted::non_prune(Patch::repair(format!("r{i}"), format!("t{i}"), rule, None, "e", Confidence::High)).unwrap()
        })
        .collect();
    let err = merge(&patches, &config()).unwrap_err();
    assert!(err
        .violations
        .iter()
        .any(|v| matches!(v, Violation::TokenCeiling { limit: 1200, .. })));
}

#[test]
fn leaked_identifier_fails_post_check() {
    let p = Patch::repair("r", "t", "Write totals into input.xlsx column B.", None, "e", Confidence::High);
    let err = merge(&[Admitted::non_prune(p).unwrap()], &config()).unwrap_err();
    assert_eq!(
        err.violations,
        [Violation::Leakage {
            identifier: "input.xlsx".into()
        }]
    );
}

#[test]
fn missing_heading_fails_post_check() {
    let md = "# Skill\n\n## Trigger\n- a\n\n## Workflow\n\n## Stop rules\n\n## Cost control\n";
    let v = post_check_markdown(md, &[], 1200);
    assert!(v.iter().any(|v| matches!(v, Violation::MissingHeading(h) if h == "Artifact checklist")), "{v:?}");
}
