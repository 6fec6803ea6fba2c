use std::cell::Cell;

use tracecard::card::parse_yaml;
use tracecard::distill::{
    run_error_analyst, AnalystInput, Confidence, ErrorAnalyst, LookupError, Mismatch, Oracle, OracleBudget, OracleError,
    OracleSession, Patch, RecordedOracle, TaskRecord, TaxonomyCode, TemplateErrorAnalyst, DEFAULT_ORACLE_BUDGET,
};
use tracecard::Outcome;

const CARD: &str = include_str!("fixtures/reference_card.yaml");

/// Counts calls that actually reach the oracle.
struct CountingOracle {
    calls: Cell<u32>,
}

impl Oracle for CountingOracle {
    fn inspect_mismatches(&self, _task: &str) -> Result<Vec<Mismatch>, OracleError> {
        self.calls.set(self.calls.get() + 1);
        Ok(vec![Mismatch {
            item: "B2".into(),
            expected: "approved".into(),
            actual: Some("rejected".into()),
        }])
    }

    fn read_gold_snippet(&self, _task: &str, item: &str) -> Result<String, OracleError> {
        self.calls.set(self.calls.get() + 1);
        Ok(format!("{item}: approved"))
    }
}

/// Makes four lookups no matter what, then claims a confident diagnosis.
struct GreedyAnalyst {
    results: std::cell::RefCell<Vec<bool>>,
}

impl ErrorAnalyst for GreedyAnalyst {
    fn diagnose(&self, input: &AnalystInput<'_>, oracle: &mut OracleSession<'_>) -> Option<Patch> {
        let mut results = self.results.borrow_mut();
        results.push(oracle.inspect_mismatches().is_ok());
        for _ in 0..3 {
            results.push(oracle.read_gold_snippet("B2").is_ok());
        }
        Some(Patch::repair(
            "greedy",
            input.trajectory(),
            "Copy approval states from the reference column.",
            Some(TaxonomyCode::T6),
            "read every snippet",
            Confidence::High,
        ))
    }
}

#[test]
fn fourth_lookup_is_refused_and_confidence_forced_low() {
    let card = parse_yaml(CARD).unwrap();
    let input = AnalystInput::new(&card, Outcome::Fail, true);
    let oracle = CountingOracle { calls: Cell::new(0) };
    let analyst = GreedyAnalyst {
        results: Default::default(),
    };
    let analysis = run_error_analyst(&analyst, &input, &oracle, OracleBudget::default());
    assert_eq!(*analyst.results.borrow(), [true, true, true, false]);
    assert_eq!(oracle.calls.get(), DEFAULT_ORACLE_BUDGET);
    assert_eq!(analysis.lookups_used, 3);
    assert!(analysis.budget_exhausted);
    assert_eq!(analysis.patch.confidence, Confidence::Low);
    assert_eq!(analysis.patch.source_trajectory, "sb-task-47484");
}

#[test]
fn refusal_is_reported_as_budget_exhaustion() {
    let oracle = CountingOracle { calls: Cell::new(0) };
    let mut session = OracleSession::new(&oracle, "t", OracleBudget::new(1));
    assert!(session.inspect_mismatches().is_ok());
    assert_eq!(session.read_gold_snippet("B2"), Err(LookupError::BudgetExhausted));
    assert_eq!(session.remaining(), 0);
    assert_eq!(session.refused(), 1);
    assert_eq!(oracle.calls.get(), 1);
}

#[test]
fn undiagnosable_failure_gets_low_confidence_repair() {
    let card = parse_yaml(CARD).unwrap();
    let input = AnalystInput::new(&card, Outcome::Fail, true);
    let oracle = CountingOracle { calls: Cell::new(0) };
    let analysis = run_error_analyst(&TemplateErrorAnalyst, &input, &oracle, OracleBudget::default());
    assert_eq!(analysis.lookups_used, 3);
    assert_eq!(analysis.patch.confidence, Confidence::Low);
    assert!(analysis.patch.validate().is_ok());
}

#[test]
fn classified_failure_gets_confident_repair_in_one_lookup() {
    let card = parse_yaml(CARD).unwrap();
    let input = AnalystInput::new(&card, Outcome::Partial, true);
    let oracle = RecordedOracle::new([TaskRecord {
        session_id: "sb-task-47484".into(),
        outcome: Outcome::Partial,
        mismatches: vec![Mismatch {
            item: "C4".into(),
            expected: "Paid".into(),
            actual: Some("TBD".into()),
        }],
        gold: Default::default(),
    }]);
    let analysis = run_error_analyst(&TemplateErrorAnalyst, &input, &oracle, OracleBudget::default());
    assert_eq!(analysis.lookups_used, 1);
    assert_eq!(analysis.patch.failure_type, Some(TaxonomyCode::T4));
    assert_eq!(analysis.patch.confidence, Confidence::High);
}

#[test]
fn missing_oracle_is_recorded_as_evidence() {
    let card = parse_yaml(CARD).unwrap();
    let input = AnalystInput::new(&card, Outcome::Fail, true);
    let analysis = run_error_analyst(&TemplateErrorAnalyst, &input, &RecordedOracle::default(), OracleBudget::default());
    assert_eq!(analysis.patch.evidence.as_deref(), Some("oracle unavailable"));
    assert_eq!(analysis.patch.confidence, Confidence::Low);
}
