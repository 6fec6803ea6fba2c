//! Cache-aware USD cost attribution.
//!
//! Money is an exact count of picodollars. A rate of `r` dollars per million
//! tokens is stored as `r * 1e6` micro-dollars per million tokens, which is
//! numerically the price of one token in picodollars, so
//! `cost = tokens * rate` needs no rounding at any step.

use std::collections::BTreeMap;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::event::TokenUsage;
use crate::span::{CallGraph, SessionTree, Span, SpanKind};

pub const PICOS_PER_USD: i128 = 1_000_000_000_000;

/// Exact USD amount in picodollars.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Usd(i128);

impl Usd {
    pub const ZERO: Usd = Usd(0);

    pub const fn from_picos(picos: i128) -> Self {
        Usd(picos)
    }

    pub const fn picos(self) -> i128 {
        self.0
    }

    /// Nearest picodollar to `dollars`. `None` for non-finite input.
    pub fn from_dollars(dollars: f64) -> Option<Self> {
        if !dollars.is_finite() {
            return None;
        }
        Some(Usd((dollars * PICOS_PER_USD as f64).round() as i128))
    }

    pub fn to_f64(self) -> f64 {
        let whole = self.0 / PICOS_PER_USD;
        let frac = self.0 % PICOS_PER_USD;
        whole as f64 + frac as f64 / PICOS_PER_USD as f64
    }

    /// Shortest decimal that denotes the amount exactly, always with a
    /// fractional part (`2.0`, `0.057985`).
    pub fn to_exact_decimal(self) -> String {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let whole = abs / PICOS_PER_USD as u128;
        let frac = abs % PICOS_PER_USD as u128;
        let mut digits = format!("{frac:012}");
        while digits.len() > 1 && digits.ends_with('0') {
            digits.pop();
        }
        format!("{sign}{whole}.{digits}")
    }

    /// Parses a plain decimal (`12`, `-0.5`, `0.057985`). Digits past the
    /// twelfth fractional place are rounded half away from zero.
    pub fn parse_decimal(text: &str) -> Option<Self> {
        let (neg, body) = match text.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, text),
        };
        let (whole, frac) = body.split_once('.').unwrap_or((body, ""));
        if whole.is_empty() && frac.is_empty() {
            return None;
        }
        if !whole.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
            return None;
        }
        let whole: i128 = if whole.is_empty() { 0 } else { whole.parse().ok()? };
        let mut picos = whole.checked_mul(PICOS_PER_USD)?;
        let mut scale = PICOS_PER_USD / 10;
        for (i, d) in frac.bytes().enumerate() {
            let d = (d - b'0') as i128;
            if i < 12 {
                picos += d * scale;
                scale /= 10;
            } else {
                if d >= 5 {
                    picos += 1;
                }
                break;
            }
        }
        Some(Usd(if neg { -picos } else { picos }))
    }

    /// Fraction `self / other`; `None` when `other` is zero.
    pub fn ratio(self, other: Usd) -> Option<f64> {
        (other.0 != 0).then(|| self.0 as f64 / other.0 as f64)
    }
}

/// Six fractional digits, rounded half away from zero.
impl fmt::Display for Usd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const STEP: i128 = 1_000_000;
        let half = STEP / 2;
        let micros = if self.0 >= 0 {
            (self.0 + half) / STEP
        } else {
            (self.0 - half) / STEP
        };
        let sign = if micros < 0 { "-" } else { "" };
        let abs = micros.unsigned_abs();
        write!(f, "{sign}{}.{:06}", abs / 1_000_000, abs % 1_000_000)
    }
}

impl Add for Usd {
    type Output = Usd;
    fn add(self, rhs: Usd) -> Usd {
        Usd(self.0 + rhs.0)
    }
}

impl AddAssign for Usd {
    fn add_assign(&mut self, rhs: Usd) {
        self.0 += rhs.0;
    }
}

impl Sum for Usd {
    fn sum<I: Iterator<Item = Usd>>(iter: I) -> Usd {
        iter.fold(Usd::ZERO, Add::add)
    }
}

impl Mul<u64> for Usd {
    type Output = Usd;
    fn mul(self, k: u64) -> Usd {
        Usd(self.0 * k as i128)
    }
}

/// Price per million tokens, held as integer micro-dollars.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rate(u64);

impl Rate {
    pub const fn from_micros_per_million(micros: u64) -> Self {
        Rate(micros)
    }

    /// `None` for negative, non-finite or absurdly large prices.
    pub fn from_dollars_per_million(dollars: f64) -> Option<Self> {
        if !(0.0..=1e9).contains(&dollars) {
            return None;
        }
        Some(Rate((dollars * 1e6).round() as u64))
    }

    pub fn micros_per_million(self) -> u64 {
        self.0
    }

    pub fn dollars_per_million(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn price(self, tokens: u64) -> Usd {
        Usd(tokens as i128 * self.0 as i128)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelRates {
    pub input: Rate,
    pub output: Rate,
    pub cache_read: Rate,
    pub cache_write: Rate,
}

impl ModelRates {
    pub fn from_dollars(input: f64, output: f64, cache_read: f64, cache_write: f64) -> Option<Self> {
        Some(Self {
            input: Rate::from_dollars_per_million(input)?,
            output: Rate::from_dollars_per_million(output)?,
            cache_read: Rate::from_dollars_per_million(cache_read)?,
            cache_write: Rate::from_dollars_per_million(cache_write)?,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CostBreakdown {
    pub input: Usd,
    pub output: Usd,
    pub cache_read: Usd,
    pub cache_write: Usd,
    pub total: Usd,
}

impl Add for CostBreakdown {
    type Output = CostBreakdown;
    fn add(self, rhs: Self) -> Self {
        CostBreakdown {
            input: self.input + rhs.input,
            output: self.output + rhs.output,
            cache_read: self.cache_read + rhs.cache_read,
            cache_write: self.cache_write + rhs.cache_write,
            total: self.total + rhs.total,
        }
    }
}

impl Sum for CostBreakdown {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(CostBreakdown::default(), Add::add)
    }
}

pub fn span_cost(tokens: &TokenUsage, rates: &ModelRates) -> CostBreakdown {
    let input = rates.input.price(tokens.input);
    let output = rates.output.price(tokens.output);
    let cache_read = rates.cache_read.price(tokens.cache_read);
    let cache_write = rates.cache_write.price(tokens.cache_write);
    CostBreakdown {
        input,
        output,
        cache_read,
        cache_write,
        total: input + output + cache_read + cache_write,
    }
}

/// Cost with cache reads billed as fresh input.
pub fn naive_cost(tokens: &TokenUsage, rates: &ModelRates) -> Usd {
    span_cost(
        tokens,
        &ModelRates {
            cache_read: rates.input,
            ..*rates
        },
    )
    .total
}

/// `naive_cost / span_cost`; `None` when the exact cost is zero.
pub fn overstatement_factor(tokens: &TokenUsage, rates: &ModelRates) -> Option<f64> {
    naive_cost(tokens, rates).ratio(span_cost(tokens, rates).total)
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CostError {
    #[error("no pricing for model {0:?}")]
    UnknownModel(String),
    #[error("pricing table: {0}")]
    Config(String),
}

pub const PRICING_FORMAT_VERSION: u32 = 1;

/// Model id → rates.
///
/// File format (TOML):
///
/// ```toml
/// version = 1
///
/// [models."openai-codex/gpt-5.4"]
/// input = 2.00        # USD per million tokens
/// output = 8.00
/// cache_read = 0.50
/// cache_write = 2.00
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PricingTable {
    models: BTreeMap<String, ModelRates>,
}

#[derive(Serialize, Deserialize)]
struct PricingFile {
    version: u32,
    #[serde(default)]
    models: BTreeMap<String, RateRow>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RateRow {
    input: f64,
    output: f64,
    cache_read: f64,
    cache_write: f64,
}

pub const DEFAULT_MODEL: &str = "openai-codex/gpt-5.4";

impl Default for PricingTable {
    fn default() -> Self {
        let mut models = BTreeMap::new();
        models.insert(
            DEFAULT_MODEL.to_string(),
            ModelRates {
                input: Rate::from_micros_per_million(2_000_000),
                output: Rate::from_micros_per_million(8_000_000),
                cache_read: Rate::from_micros_per_million(500_000),
                cache_write: Rate::from_micros_per_million(2_000_000),
            },
        );
        PricingTable { models }
    }
}

impl PricingTable {
    pub fn empty() -> Self {
        PricingTable {
            models: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, model: impl Into<String>, rates: ModelRates) {
        self.models.insert(model.into(), rates);
    }

    pub fn get(&self, model: &str) -> Result<&ModelRates, CostError> {
        self.models
            .get(model)
            .ok_or_else(|| CostError::UnknownModel(model.to_string()))
    }

    pub fn models(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, CostError> {
        let file: PricingFile = toml::from_str(text).map_err(|e| CostError::Config(e.to_string()))?;
        if file.version != PRICING_FORMAT_VERSION {
            return Err(CostError::Config(format!(
                "unsupported version {} (expected {PRICING_FORMAT_VERSION})",
                file.version
            )));
        }
        let mut table = PricingTable::empty();
        for (model, row) in file.models {
            let rates = ModelRates::from_dollars(row.input, row.output, row.cache_read, row.cache_write)
                .ok_or_else(|| CostError::Config(format!("model {model:?}: rates must be finite and >= 0")))?;
            table.insert(model, rates);
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, CostError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CostError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let file = PricingFile {
            version: PRICING_FORMAT_VERSION,
            models: self
                .models
                .iter()
                .map(|(k, r)| {
                    (
                        k.clone(),
                        RateRow {
                            input: r.input.dollars_per_million(),
                            output: r.output.dollars_per_million(),
                            cache_read: r.cache_read.dollars_per_million(),
                            cache_write: r.cache_write.dollars_per_million(),
                        },
                    )
                })
                .collect(),
        };
        toml::to_string(&file).expect("pricing table serializes")
    }
}

/// Cost annotations for one session.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SessionCost {
    /// Every span in the tree; spans without tokens carry a zero breakdown.
    pub per_span: BTreeMap<String, CostBreakdown>,
    /// Sum over this session's own spans. Child sessions are not included.
    pub total: CostBreakdown,
    pub tokens: TokenUsage,
}

impl SessionCost {
    pub fn span(&self, span_id: &str) -> Usd {
        self.per_span.get(span_id).map(|c| c.total).unwrap_or_default()
    }
}

fn span_breakdown(span: &Span, tree: &SessionTree, pricing: &PricingTable) -> Result<CostBreakdown, CostError> {
    match (&span.tokens, span.kind) {
        (Some(tokens), SpanKind::Llm) => {
            let model = span.model.as_deref().unwrap_or(&tree.model);
            Ok(span_cost(tokens, pricing.get(model)?))
        }
        _ => Ok(CostBreakdown::default()),
    }
}

pub fn session_cost(tree: &SessionTree, pricing: &PricingTable) -> Result<SessionCost, CostError> {
    let mut out = SessionCost::default();
    for span in tree.spans() {
        let c = span_breakdown(span, tree, pricing)?;
        out.total = out.total + c;
        if let Some(t) = span.tokens {
            out.tokens += t;
        }
        out.per_span.insert(span.span_id.clone(), c);
    }
    Ok(out)
}

/// Costs for every session in a call graph, keyed by session key. Each
/// session's total covers its own spans only.
pub fn call_graph_costs(graph: &CallGraph<'_>, pricing: &PricingTable) -> Result<BTreeMap<String, SessionCost>, CostError> {
    graph
        .sessions()
        .into_iter()
        .map(|t| Ok((t.session_key.clone(), session_cost(t, pricing)?)))
        .collect()
}

/// Spans by cost descending, ties by span id; a deterministic total order.
pub fn rank_spans<'a>(tree: &'a SessionTree, costs: &SessionCost) -> Vec<(&'a Span, Usd)> {
    let mut ranked: Vec<(&Span, Usd)> = tree
        .spans()
        .into_iter()
        .map(|s| (s, costs.span(&s.span_id)))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.span_id.cmp(&b.0.span_id)));
    ranked
}
