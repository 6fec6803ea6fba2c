//! Ground-truth access for repair analysis, metered by a lookup budget.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::event::Outcome;

/// Lookups granted to one error analysis.
pub const DEFAULT_ORACLE_BUDGET: u32 = 3;

/// One graded item whose produced value differs from the reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub item: String,
    pub expected: String,
    /// `None` when the item was never produced.
    #[serde(default)]
    pub actual: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("oracle unavailable: {0}")]
    Unavailable(String),
    #[error("no gold snippet for {0:?}")]
    NoSnippet(String),
}

pub trait Oracle {
    fn inspect_mismatches(&self, task: &str) -> Result<Vec<Mismatch>, OracleError>;
    fn read_gold_snippet(&self, task: &str, item: &str) -> Result<String, OracleError>;
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LookupError {
    #[error("oracle budget exhausted")]
    BudgetExhausted,
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Remaining oracle lookups. Never goes below zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleBudget {
    remaining: u32,
}

impl OracleBudget {
    pub fn new(lookups: u32) -> Self {
        Self { remaining: lookups }
    }

    pub fn remaining(self) -> u32 {
        self.remaining
    }

    fn take(&mut self) -> bool {
        if self.remaining == 0 {
            return false;
        }
        self.remaining -= 1;
        true
    }
}

impl Default for OracleBudget {
    fn default() -> Self {
        Self::new(DEFAULT_ORACLE_BUDGET)
    }
}

/// An analyst's metered view of the oracle for one task. Lookups past the
/// budget are refused without reaching the oracle.
pub struct OracleSession<'a> {
    oracle: &'a dyn Oracle,
    task: String,
    budget: OracleBudget,
    used: u32,
    refused: u32,
    unavailable: bool,
}

impl<'a> OracleSession<'a> {
    pub fn new(oracle: &'a dyn Oracle, task: impl Into<String>, budget: OracleBudget) -> Self {
        Self {
            oracle,
            task: task.into(),
            budget,
            used: 0,
            refused: 0,
            unavailable: false,
        }
    }

    pub fn task(&self) -> &str {
        &self.task
    }

    fn charge(&mut self) -> Result<(), LookupError> {
        if self.budget.take() {
            self.used += 1;
            Ok(())
        } else {
            self.refused += 1;
            Err(LookupError::BudgetExhausted)
        }
    }

    fn note<T>(&mut self, r: Result<T, OracleError>) -> Result<T, LookupError> {
        if let Err(OracleError::Unavailable(_)) = &r {
            self.unavailable = true;
        }
        r.map_err(LookupError::from)
    }

    pub fn inspect_mismatches(&mut self) -> Result<Vec<Mismatch>, LookupError> {
        self.charge()?;
        let r = self.oracle.inspect_mismatches(&self.task);
        self.note(r)
    }

    pub fn read_gold_snippet(&mut self, item: &str) -> Result<String, LookupError> {
        self.charge()?;
        let r = self.oracle.read_gold_snippet(&self.task, item);
        self.note(r)
    }

    pub fn lookups_used(&self) -> u32 {
        self.used
    }

    pub fn remaining(&self) -> u32 {
        self.budget.remaining()
    }

    /// A lookup was attempted after the budget ran out.
    pub fn exhausted(&self) -> bool {
        self.refused > 0
    }

    pub fn refused(&self) -> u32 {
        self.refused
    }

    /// The oracle reported itself unavailable at least once.
    pub fn unavailable(&self) -> bool {
        self.unavailable
    }
}

/// Graded result of one task, as recorded in an outcomes file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub session_id: String,
    pub outcome: Outcome,
    #[serde(default)]
    pub mismatches: Vec<Mismatch>,
    #[serde(default)]
    pub gold: BTreeMap<String, String>,
}

/// Oracle backed by recorded task outcomes.
#[derive(Debug, Clone, Default)]
pub struct RecordedOracle {
    tasks: BTreeMap<String, TaskRecord>,
}

impl RecordedOracle {
    pub fn new(records: impl IntoIterator<Item = TaskRecord>) -> Self {
        Self {
            tasks: records.into_iter().map(|r| (r.session_id.clone(), r)).collect(),
        }
    }

    pub fn get(&self, task: &str) -> Option<&TaskRecord> {
        self.tasks.get(task)
    }

    pub fn records(&self) -> impl Iterator<Item = &TaskRecord> {
        self.tasks.values()
    }
}

impl Oracle for RecordedOracle {
    fn inspect_mismatches(&self, task: &str) -> Result<Vec<Mismatch>, OracleError> {
        self.tasks
            .get(task)
            .map(|r| r.mismatches.clone())
            .ok_or_else(|| OracleError::Unavailable(format!("no record for {task}")))
    }

    fn read_gold_snippet(&self, task: &str, item: &str) -> Result<String, OracleError> {
        let record = self
            .tasks
            .get(task)
            .ok_or_else(|| OracleError::Unavailable(format!("no record for {task}")))?;
        record
            .gold
            .get(item)
            .cloned()
            .ok_or_else(|| OracleError::NoSnippet(item.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    struct Counting(Cell<u32>);

    impl Oracle for Counting {
        fn inspect_mismatches(&self, _: &str) -> Result<Vec<Mismatch>, OracleError> {
            self.0.set(self.0.get() + 1);
            Ok(vec![])
        }
        fn read_gold_snippet(&self, _: &str, _: &str) -> Result<String, OracleError> {
            self.0.set(self.0.get() + 1);
            Ok(String::new())
        }
    }

    #[test]
    fn budget_caps_lookups() {
        let oracle = Counting(Cell::new(0));
        let mut s = OracleSession::new(&oracle, "t", OracleBudget::default());
        assert!(s.inspect_mismatches().is_ok());
        assert!(s.read_gold_snippet("a").is_ok());
        assert!(s.read_gold_snippet("b").is_ok());
        assert_eq!(s.read_gold_snippet("c"), Err(LookupError::BudgetExhausted));
        assert_eq!(s.inspect_mismatches(), Err(LookupError::BudgetExhausted));
        assert_eq!(oracle.0.get(), 3);
        assert_eq!(s.remaining(), 0);
        assert!(s.exhausted());
    }

    #[test]
    fn missing_record_is_unavailable() {
        let oracle = RecordedOracle::default();
        let mut s = OracleSession::new(&oracle, "t", OracleBudget::default());
        assert!(s.inspect_mismatches().is_err());
        assert!(s.unavailable());
    }
}
