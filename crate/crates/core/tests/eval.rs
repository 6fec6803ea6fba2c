use std::path::Path;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tracecard::card::{parse_yaml, CardOutcome, TraceCard};
use tracecard::distill::{admit_prune, Action, Condition, Patch};
use tracecard::eval::{
    apply_condition, classify_pair, pair_conditions, prune_coverage, read_results, summarize, Classification, Quality,
    Regime, SummaryReport, TaskOutcome,
};
use tracecard::Usd;

const RESULTS: &str = include_str!("fixtures/ablation_results.csv");
const RULES: &str = include_str!("fixtures/prune_rules.yaml");
const REFERENCE_CARD: &str = include_str!("fixtures/reference_card.yaml");

fn report(outcomes: &[TaskOutcome], cond: Condition) -> SummaryReport {
    let pairs = pair_conditions(outcomes, Condition::Baseline, cond).unwrap();
    summarize(&pairs, Condition::Baseline, cond).unwrap()
}

fn coverage_cards() -> Vec<TraceCard> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/coverage");
    let mut paths: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    paths
        .iter()
        .map(|p| parse_yaml(&std::fs::read_to_string(p).unwrap()).unwrap())
        .collect()
}

#[test]
fn full_condition_reproduces_published_rates() {
    let outcomes = read_results(RESULTS.as_bytes()).unwrap();
    let r = report(&outcomes, Condition::Full);
    assert_eq!((r.counts.n, r.counts.regressions, r.counts.wins, r.counts.ties), (30, 4, 3, 23));
    assert_eq!(r.counts.catastrophic, 1);
    assert_eq!(format!("{:.1}", r.preservation_rate * 100.0), "86.7");
    assert_eq!(format!("{:.0}", r.regression_rate * 100.0), "13");
    assert_eq!(format!("{:.0}", r.counts.wins as f64 / 30.0 * 100.0), "10");
    let success = &r.regimes[0];
    assert_eq!(success.regime, Regime::Success);
    assert_eq!((success.counts.n, success.counts.ties, success.counts.regressions), (17, 13, 4));
    assert_eq!(r.regimes[1].counts.n, 10);
    assert_eq!((r.regimes[2].counts.n, r.regimes[2].counts.wins), (3, 2));
}

#[test]
fn no_prune_condition_reproduces_published_rates() {
    let outcomes = read_results(RESULTS.as_bytes()).unwrap();
    let r = report(&outcomes, Condition::NoPrune);
    assert_eq!(r.counts.regressions, 13);
    assert_eq!(format!("{:.1}", r.preservation_rate * 100.0), "56.7");
    assert_eq!(r.regimes[0].counts.regressions, 12);
    assert_eq!(r.regimes[0].counts.ties, 5);
}

#[test]
fn report_is_invariant_to_row_order() {
    let outcomes = read_results(RESULTS.as_bytes()).unwrap();
    let expected = report(&outcomes, Condition::Full);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..20 {
        let mut shuffled = outcomes.clone();
        shuffled.shuffle(&mut rng);
        let r = report(&shuffled, Condition::Full);
        assert_eq!(r.to_canonical_json(), expected.to_canonical_json());
        assert_eq!(r.to_markdown(), expected.to_markdown());
    }
}

#[test]
fn zero_cost_baselines_are_flagged_not_averaged() {
    let outcomes = read_results(RESULTS.as_bytes()).unwrap();
    let pairs = pair_conditions(&outcomes, Condition::Baseline, Condition::NoPrune).unwrap();
    // a skill run that produced nothing costs ~0, but every baseline cost is positive
    assert!(pairs.iter().all(|p| p.delta_cost_fraction.is_some()));
    let zero = vec![
        TaskOutcome {
            task_id: "z".into(),
            condition: Condition::Baseline,
            quality: Quality::ZERO,
            cost: Usd::ZERO,
            card_ref: None,
        },
        TaskOutcome {
            task_id: "z".into(),
            condition: Condition::Full,
            quality: Quality::ONE,
            cost: Usd::parse_decimal("0.1").unwrap(),
            card_ref: None,
        },
    ];
    let r = report(&zero, Condition::Full);
    assert_eq!(r.zero_cost_baselines, 1);
    assert_eq!(r.median_delta_cost, None);
}

#[test]
fn prune_coverage_matches_two_of_seventeen() {
    let rules: Vec<Patch> = serde_yaml::from_str(RULES).unwrap();
    let cards = coverage_cards();
    assert_eq!(cards.iter().filter(|c| c.outcome == CardOutcome::Success).count(), 17);
    let cov = prune_coverage(&rules, &cards);
    assert_eq!(cov.success_cards, 17);
    assert_eq!(cov.matched, ["held-05", "held-11"]);
    assert_eq!(cov.fraction, 2.0 / 17.0);
    assert_eq!(format!("{:.1}", cov.fraction * 100.0), "11.8");
    assert_eq!(prune_coverage(&[], &cards).fraction, 0.0);
}

#[test]
fn coverage_is_total_when_every_card_carries_the_waste() {
    use tracecard::card::{compile_card, CompilerConfig};
    use tracecard::synth::corpus;
    use tracecard::{build_tree, PricingTable, SessionLog};

    let rules: Vec<Patch> = serde_yaml::from_str(RULES).unwrap();
    let (events, outcomes) = corpus(0, 40);
    let logs = SessionLog::group(events).unwrap();
    let cards: Vec<TraceCard> = outcomes
        .iter()
        .map(|(key, _)| {
            let log = logs.iter().find(|l| &l.session_key == key).unwrap();
            let tree = build_tree(log).unwrap();
            compile_card(&tree, &PricingTable::default(), &CompilerConfig::default()).unwrap()
        })
        .filter(|c| c.outcome == CardOutcome::Success && c.redundant_tool_calls.iter().any(|r| r.tool == "read_file"))
        .collect();
    assert!(cards.len() >= 5);
    let cov = prune_coverage(&rules[..1], &cards);
    assert_eq!(cov.fraction, 1.0);
}

#[test]
fn ablation_inputs() {
    let card = parse_yaml(REFERENCE_CARD).unwrap();
    let stripped = apply_condition(std::slice::from_ref(&card), &[], Condition::NoCostAttr);
    assert!(!stripped.cards[0].has_costs());
    assert_eq!(stripped.cards[0].total_tokens, card.total_tokens);

    let patches = vec![
        Patch::prune("a/prune", "a", "Avoid repeated reads.", "span-7", "the first read already loaded the sheet"),
        Patch::preserve("a/preserve", "a", "Plan, then read inputs once."),
        Patch::preserve("b/preserve", "b", "Plan, then read inputs once."),
        Patch::repair("c/repair", "c", "Fill pending cells.", None, "C4 was TBD", tracecard::distill::Confidence::High),
    ];
    let no_prune = apply_condition(std::slice::from_ref(&card), &patches, Condition::NoPrune);
    assert_eq!(no_prune.patches.len(), 3);
    assert!(no_prune.patches.iter().all(|p| p.action != Action::Prune));
    assert!(apply_condition(std::slice::from_ref(&card), &patches, Condition::Baseline).patches.is_empty());
    assert!(!apply_condition(&[], &[], Condition::Baseline).distills);

    let empty_cf = Patch::prune("a/prune", "a", "Avoid repeated reads.", "span-7", "");
    let full = apply_condition(std::slice::from_ref(&card), &[], Condition::Full);
    let no_cf = apply_condition(std::slice::from_ref(&card), &[], Condition::NoCf);
    assert!(admit_prune(&empty_cf, &card, full.gate).is_err());
    assert!(admit_prune(&empty_cf, &card, no_cf.gate).is_ok());
    // conditions (a) and (c) still hold without the counterfactual check
    let mut wrong_target = empty_cf.clone();
    wrong_target.target_span = Some("span-99".into());
    assert!(admit_prune(&wrong_target, &card, no_cf.gate).is_err());
    let mut capped = empty_cf;
    capped.rule = "Spend at most $0.05 on reads.".into();
    assert!(admit_prune(&capped, &card, no_cf.gate).is_err());
}

fn quality() -> impl Strategy<Value = Quality> {
    (0u32..=1000).prop_map(|m| Quality::parse(&format!("{}.{:03}", m / 1000, m % 1000)).unwrap())
}

proptest! {
    #[test]
    fn classification_is_a_trichotomy(b in quality(), s in quality()) {
        let mk = |cond, q| TaskOutcome { task_id: "t".into(), condition: cond, quality: q, cost: Usd::ZERO, card_ref: None };
        let p = classify_pair(&mk(Condition::Baseline, b), &mk(Condition::Full, s)).unwrap();
        let (bf, sf) = (b.to_f64(), s.to_f64());
        let expected = if sf < bf - 0.01 - 1e-12 {
            Classification::Regression
        } else if sf > bf + 0.01 + 1e-12 {
            Classification::Win
        } else {
            Classification::Tie
        };
        prop_assert_eq!(p.classification, expected);
        let regime = Regime::of(b);
        prop_assert_eq!(regime == Regime::Success, bf == 1.0);
        prop_assert_eq!(regime == Regime::Fail, bf == 0.0);
    }
}
