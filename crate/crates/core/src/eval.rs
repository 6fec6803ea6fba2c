//! Paired baseline-vs-skill comparison and summary statistics.

use std::collections::BTreeMap;
use std::fmt::{self, Write};

use serde::Serialize;

use crate::card::{CardOutcome, TraceCard};
use crate::cost::Usd;
use crate::distill::{prune_rule_matches, Action, Condition, GateConfig, Patch};

/// Quality in billionths, so band and regime comparisons are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Quality(u64);

const QUALITY_SCALE: u64 = 1_000_000_000;
/// The ±0.01 dead band, in billionths.
const BAND: u64 = 10_000_000;

impl Quality {
    pub const ZERO: Quality = Quality(0);
    pub const ONE: Quality = Quality(QUALITY_SCALE);

    /// Parses a decimal in `[0, 1]` exactly (up to nine places).
    pub fn parse(text: &str) -> Option<Self> {
        let text = text.trim();
        let (whole, frac) = text.split_once('.').unwrap_or((text, ""));
        if whole.is_empty() && frac.is_empty() || frac.len() > 9 {
            return None;
        }
        if !whole.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
            return None;
        }
        let whole: u64 = if whole.is_empty() { 0 } else { whole.parse().ok()? };
        let frac_val: u64 = if frac.is_empty() {
            0
        } else {
            frac.parse::<u64>().ok()? * 10u64.pow(9 - frac.len() as u32)
        };
        let q = whole.checked_mul(QUALITY_SCALE)?.checked_add(frac_val)?;
        (q <= QUALITY_SCALE).then_some(Quality(q))
    }

    pub fn from_f64(q: f64) -> Option<Self> {
        (0.0..=1.0)
            .contains(&q)
            .then(|| Quality((q * QUALITY_SCALE as f64).round() as u64))
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / QUALITY_SCALE as f64
    }
}

impl fmt::Display for Quality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut frac = format!("{:09}", self.0 % QUALITY_SCALE);
        while frac.len() > 1 && frac.ends_with('0') {
            frac.pop();
        }
        write!(f, "{}.{}", self.0 / QUALITY_SCALE, frac)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskOutcome {
    pub task_id: String,
    pub condition: Condition,
    pub quality: Quality,
    pub cost: Usd,
    pub card_ref: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Win,
    Tie,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Success,
    Partial,
    Fail,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Success, Regime::Partial, Regime::Fail];

    pub fn of(q: Quality) -> Regime {
        if q == Quality::ONE {
            Regime::Success
        } else if q == Quality::ZERO {
            Regime::Fail
        } else {
            Regime::Partial
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Success => "success",
            Regime::Partial => "partial",
            Regime::Fail => "fail",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedResult {
    pub task_id: String,
    pub baseline_quality: f64,
    pub skill_quality: f64,
    pub delta_q: f64,
    /// `(c_skill - c_base) / c_base`; `None` for a zero-cost baseline.
    pub delta_cost_fraction: Option<f64>,
    pub classification: Classification,
    /// Skill quality 0 where the baseline scored above 0.
    pub catastrophic: bool,
    pub regime: Regime,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PairingError {
    #[error("cannot pair task {baseline} with task {skill}")]
    MismatchedTask { baseline: String, skill: String },
    #[error("task {task} has no {condition} result")]
    Missing { task: String, condition: Condition },
    #[error("task {task} has more than one {condition} result")]
    Duplicate { task: String, condition: Condition },
}

/// Regression when the skill falls more than 0.01 below the baseline, win
/// when it rises more than 0.01 above, tie otherwise.
pub fn classify_pair(baseline: &TaskOutcome, skill: &TaskOutcome) -> Result<PairedResult, PairingError> {
    if baseline.task_id != skill.task_id {
        return Err(PairingError::MismatchedTask {
            baseline: baseline.task_id.clone(),
            skill: skill.task_id.clone(),
        });
    }
    let (b, s) = (baseline.quality.0, skill.quality.0);
    let classification = if s + BAND < b {
        Classification::Regression
    } else if s > b + BAND {
        Classification::Win
    } else {
        Classification::Tie
    };
    let delta_cost_fraction = (baseline.cost > Usd::ZERO).then(|| {
        (skill.cost.picos() - baseline.cost.picos()) as f64 / baseline.cost.picos() as f64
    });
    Ok(PairedResult {
        task_id: baseline.task_id.clone(),
        baseline_quality: baseline.quality.to_f64(),
        skill_quality: skill.quality.to_f64(),
        delta_q: (s as i64 - b as i64) as f64 / QUALITY_SCALE as f64,
        delta_cost_fraction,
        classification,
        catastrophic: s == 0 && b > 0,
        regime: Regime::of(baseline.quality),
    })
}

/// Pairs every task's `baseline` result with its `skill` result.
pub fn pair_conditions(
    outcomes: &[TaskOutcome],
    baseline: Condition,
    skill: Condition,
) -> Result<Vec<PairedResult>, PairingError> {
    let index = |cond: Condition| -> Result<BTreeMap<&str, &TaskOutcome>, PairingError> {
        let mut m = BTreeMap::new();
        for o in outcomes.iter().filter(|o| o.condition == cond) {
            if m.insert(o.task_id.as_str(), o).is_some() {
                return Err(PairingError::Duplicate {
                    task: o.task_id.clone(),
                    condition: cond,
                });
            }
        }
        Ok(m)
    };
    let (base, sk) = (index(baseline)?, index(skill)?);
    if let Some(task) = sk.keys().find(|t| !base.contains_key(*t)) {
        return Err(PairingError::Missing {
            task: task.to_string(),
            condition: baseline,
        });
    }
    if let Some(task) = base.keys().find(|t| !sk.contains_key(*t)) {
        return Err(PairingError::Missing {
            task: task.to_string(),
            condition: skill,
        });
    }
    base.iter()
        .map(|(task, b)| classify_pair(b, sk[task]))
        .collect()
}

/// Lower median: the smaller central element for even counts.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Counts {
    pub n: usize,
    pub wins: usize,
    pub ties: usize,
    pub regressions: usize,
    pub catastrophic: usize,
}

impl Counts {
    fn add(&mut self, p: &PairedResult) {
        self.n += 1;
        match p.classification {
            Classification::Win => self.wins += 1,
            Classification::Tie => self.ties += 1,
            Classification::Regression => self.regressions += 1,
        }
        if p.catastrophic {
            self.catastrophic += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeRow {
    pub regime: Regime,
    pub counts: Counts,
    pub median_delta_q: Option<f64>,
    pub median_delta_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryReport {
    pub baseline: Condition,
    pub condition: Condition,
    pub counts: Counts,
    /// (ties + wins) / n.
    pub preservation_rate: f64,
    /// ties / n.
    pub ties_only_rate: f64,
    pub regression_rate: f64,
    pub median_delta_cost: Option<f64>,
    /// Pairs whose baseline cost was zero, left out of the cost medians.
    pub zero_cost_baselines: usize,
    pub regimes: Vec<RegimeRow>,
    pub regressed_tasks: Vec<String>,
    pub won_tasks: Vec<String>,
}

/// Aggregates paired results; independent of pair order. `None` for no
/// pairs.
pub fn summarize(pairs: &[PairedResult], baseline: Condition, condition: Condition) -> Option<SummaryReport> {
    if pairs.is_empty() {
        return None;
    }
    let mut sorted: Vec<&PairedResult> = pairs.iter().collect();
    sorted.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    let mut counts = Counts::default();
    for p in &sorted {
        counts.add(p);
    }
    let n = counts.n as f64;
    let costs = |ps: &[&PairedResult]| -> Vec<f64> { ps.iter().filter_map(|p| p.delta_cost_fraction).collect() };
    let regimes = Regime::ALL
        .iter()
        .map(|&regime| {
            let members: Vec<&PairedResult> = sorted.iter().copied().filter(|p| p.regime == regime).collect();
            let mut c = Counts::default();
            for p in &members {
                c.add(p);
            }
            RegimeRow {
                regime,
                counts: c,
                median_delta_q: lower_median(&members.iter().map(|p| p.delta_q).collect::<Vec<_>>()),
                median_delta_cost: lower_median(&costs(&members)),
            }
        })
        .collect();
    let tasks = |class: Classification| -> Vec<String> {
        sorted
            .iter()
            .filter(|p| p.classification == class)
            .map(|p| p.task_id.clone())
            .collect()
    };
    Some(SummaryReport {
        baseline,
        condition,
        preservation_rate: (counts.ties + counts.wins) as f64 / n,
        ties_only_rate: counts.ties as f64 / n,
        regression_rate: counts.regressions as f64 / n,
        median_delta_cost: lower_median(&costs(&sorted)),
        zero_cost_baselines: sorted.iter().filter(|p| p.delta_cost_fraction.is_none()).count(),
        regimes,
        regressed_tasks: tasks(Classification::Regression),
        won_tasks: tasks(Classification::Win),
        counts,
    })
}

fn pct(f: f64) -> String {
    format!("{:.1}%", f * 100.0)
}

fn signed_pct(f: Option<f64>) -> String {
    match f {
        Some(f) => format!("{:+.1}%", f * 100.0),
        None => "n/a".into(),
    }
}

impl SummaryReport {
    pub fn to_markdown(&self) -> String {
        let c = &self.counts;
        let mut out = String::new();
        let _ = writeln!(out, "# {} vs {}\n", self.condition, self.baseline);
        let _ = writeln!(out, "| metric | value |");
        let _ = writeln!(out, "|---|---|");
        let _ = writeln!(out, "| tasks | {} |", c.n);
        let _ = writeln!(out, "| wins | {} |", c.wins);
        let _ = writeln!(out, "| ties | {} |", c.ties);
        let _ = writeln!(out, "| regressions | {} |", c.regressions);
        let _ = writeln!(out, "| catastrophic | {} |", c.catastrophic);
        let _ = writeln!(out, "| quality preserved (ties + wins) | {} |", pct(self.preservation_rate));
        let _ = writeln!(out, "| ties only | {} |", pct(self.ties_only_rate));
        let _ = writeln!(out, "| regression rate | {} |", pct(self.regression_rate));
        let _ = writeln!(out, "| median cost change | {} |", signed_pct(self.median_delta_cost));
        let _ = writeln!(out, "| zero-cost baselines | {} |", self.zero_cost_baselines);
        let _ = writeln!(out, "\n| regime | n | wins | ties | regressions | catastrophic | median dQ | median cost change |");
        let _ = writeln!(out, "|---|---|---|---|---|---|---|---|");
        for r in &self.regimes {
            let rc = &r.counts;
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} | {} |",
                r.regime.as_str(),
                rc.n,
                rc.wins,
                rc.ties,
                rc.regressions,
                rc.catastrophic,
                r.median_delta_q.map_or("n/a".into(), |d| format!("{d:+.3}")),
                signed_pct(r.median_delta_cost),
            );
        }
        if !self.regressed_tasks.is_empty() {
            let _ = writeln!(out, "\nRegressed: {}", self.regressed_tasks.join(", "));
        }
        if !self.won_tasks.is_empty() {
            let _ = writeln!(out, "\nWon: {}", self.won_tasks.join(", "));
        }
        out
    }

    /// Canonical JSON: keys sorted at every level, compact.
    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("reports serialize");
        serde_json::to_string(&value).expect("values serialize")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ResultsError {
    #[error("results file: {0}")]
    Csv(#[from] csv::Error),
    #[error("results row {row}: {message}")]
    Row { row: usize, message: String },
}

#[derive(serde::Deserialize)]
struct ResultRow {
    task_id: String,
    condition: String,
    quality: String,
    cost_usd: String,
    #[serde(default)]
    card_ref: Option<String>,
}

/// Reads `task_id,condition,quality,cost_usd[,card_ref]` rows with a header.
pub fn read_results(reader: impl std::io::Read) -> Result<Vec<TaskOutcome>, ResultsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<ResultRow>().enumerate() {
        let row = row?;
        let err = |message: String| ResultsError::Row { row: i + 1, message };
        let condition = Condition::parse(&row.condition).ok_or_else(|| err(format!("unknown condition {:?}", row.condition)))?;
        let quality = Quality::parse(&row.quality).ok_or_else(|| err(format!("quality {:?} is not a decimal in [0, 1]", row.quality)))?;
        let cost = Usd::parse_decimal(row.cost_usd.trim())
            .filter(|c| *c >= Usd::ZERO)
            .ok_or_else(|| err(format!("cost_usd {:?} is not a non-negative decimal", row.cost_usd)))?;
        out.push(TaskOutcome {
            task_id: row.task_id,
            condition,
            quality,
            cost,
            card_ref: row.card_ref.filter(|c| !c.is_empty()),
        });
    }
    Ok(out)
}

pub fn write_results(outcomes: &[TaskOutcome]) -> String {
    let mut out = String::from("task_id,condition,quality,cost_usd\n");
    for o in outcomes {
        let _ = writeln!(out, "{},{},{},{}", o.task_id, o.condition, o.quality, o.cost.to_exact_decimal());
    }
    out
}

/// What a condition hands to distillation.
#[derive(Debug, Clone)]
pub struct ConditionInputs {
    pub condition: Condition,
    /// Cards as the analysts see them.
    pub cards: Vec<TraceCard>,
    /// Patches that reach the gate and merge.
    pub patches: Vec<Patch>,
    pub gate: GateConfig,
    pub distills: bool,
}

/// Applies an ablation: strips card costs for `no_cost_attr`, drops prunes
/// for `no_prune`, relaxes the counterfactual check for `no_cf`.
pub fn apply_condition(cards: &[TraceCard], patches: &[Patch], condition: Condition) -> ConditionInputs {
    let cards = cards
        .iter()
        .map(|c| if condition.cost_visible() { c.clone() } else { c.strip_costs() })
        .collect();
    let patches = if !condition.distills() {
        Vec::new()
    } else {
        patches
            .iter()
            .filter(|p| condition.keeps_prunes() || p.action != Action::Prune)
            .cloned()
            .collect()
    };
    ConditionInputs {
        condition,
        cards,
        patches,
        gate: condition.gate(),
        distills: condition.distills(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruneCoverage {
    pub matched: Vec<String>,
    pub success_cards: usize,
    pub fraction: f64,
}

/// Fraction of success-outcome cards exhibiting the waste pattern of at
/// least one prune rule.
pub fn prune_coverage(rules: &[Patch], baseline_cards: &[TraceCard]) -> PruneCoverage {
    let prunes: Vec<&Patch> = rules.iter().filter(|r| r.action == Action::Prune).collect();
    let success: Vec<&TraceCard> = baseline_cards
        .iter()
        .filter(|c| c.outcome == CardOutcome::Success)
        .collect();
    let mut matched: Vec<String> = success
        .iter()
        .filter(|c| prunes.iter().any(|r| prune_rule_matches(r, c)))
        .map(|c| c.session_id.clone())
        .collect();
    matched.sort();
    PruneCoverage {
        fraction: if success.is_empty() {
            0.0
        } else {
            matched.len() as f64 / success.len() as f64
        },
        success_cards: success.len(),
        matched,
    }
}
