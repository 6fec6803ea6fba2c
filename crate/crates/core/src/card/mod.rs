//! TraceCards: compact, deterministic per-session summaries.

mod heuristics;
mod yaml;

use std::collections::BTreeMap;

pub use heuristics::{
    classify_role, detect_failures, detect_redundancy, subagent_usage, truncate_marked, ArgNormalization,
    FailurePatterns, DEFAULT_FAILURE_PATTERNS,
};
pub use yaml::{emit_yaml, parse_yaml};

use crate::cost::{rank_spans, session_cost, CostError, PricingTable, Usd};
use crate::event::{Outcome, TokenUsage};
use crate::span::{SessionTree, SpanKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RoleHint {
    Planning,
    ToolCall,
    ErrorRecovery,
    FinalReply,
    Intermediate,
}

impl RoleHint {
    pub const ALL: [RoleHint; 5] = [
        RoleHint::Planning,
        RoleHint::ToolCall,
        RoleHint::ErrorRecovery,
        RoleHint::FinalReply,
        RoleHint::Intermediate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RoleHint::Planning => "planning",
            RoleHint::ToolCall => "tool_call",
            RoleHint::ErrorRecovery => "error_recovery",
            RoleHint::FinalReply => "final_reply",
            RoleHint::Intermediate => "intermediate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CardOutcome {
    Success,
    Partial,
    Fail,
    Unknown,
}

impl CardOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            CardOutcome::Success => "success",
            CardOutcome::Partial => "partial",
            CardOutcome::Fail => "fail",
            CardOutcome::Unknown => "unknown",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "unknown" => Some(CardOutcome::Unknown),
            other => Outcome::parse(other).map(Self::from),
        }
    }

    pub fn known(self) -> Option<Outcome> {
        match self {
            CardOutcome::Success => Some(Outcome::Success),
            CardOutcome::Partial => Some(Outcome::Partial),
            CardOutcome::Fail => Some(Outcome::Fail),
            CardOutcome::Unknown => None,
        }
    }
}

impl From<Outcome> for CardOutcome {
    fn from(o: Outcome) -> Self {
        match o {
            Outcome::Success => CardOutcome::Success,
            Outcome::Partial => CardOutcome::Partial,
            Outcome::Fail => CardOutcome::Fail,
        }
    }
}

/// One entry of `top_cost_spans`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpanSummary {
    pub span_id: Option<String>,
    pub kind: SpanKind,
    pub role_hint: Option<RoleHint>,
    /// Absent when costs were stripped from the card.
    pub cost_usd: Option<Usd>,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub args_sample: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RedundantCluster {
    pub cluster: Vec<String>,
    pub tool: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubAgentSummary {
    pub child_session_key: String,
    pub total_cost_usd: Option<Usd>,
    pub output_used_in_final: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailedStep {
    pub span_id: String,
    pub tool: String,
    pub error_excerpt: String,
    pub repaired: bool,
    pub repaired_by: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceCard {
    pub session_id: String,
    pub model: String,
    pub total_cost_usd: Option<Usd>,
    pub total_tokens: TokenUsage,
    pub outcome: CardOutcome,
    pub top_cost_spans: Vec<CostSpanSummary>,
    pub redundant_tool_calls: Vec<RedundantCluster>,
    pub sub_agents: Vec<SubAgentSummary>,
    pub failed_or_repaired: Vec<FailedStep>,
}

impl TraceCard {
    /// The card with every USD figure removed; token counts stay.
    pub fn strip_costs(&self) -> TraceCard {
        let mut card = self.clone();
        card.total_cost_usd = None;
        for s in &mut card.top_cost_spans {
            s.cost_usd = None;
        }
        for s in &mut card.sub_agents {
            s.total_cost_usd = None;
        }
        card
    }

    pub fn has_costs(&self) -> bool {
        self.total_cost_usd.is_some() || self.top_cost_spans.iter().any(|s| s.cost_usd.is_some())
    }

    /// Whether `span_id` is listed in top_cost_spans or in any redundant
    /// cluster.
    pub fn names_span(&self, span_id: &str) -> bool {
        self.top_cost_spans
            .iter()
            .any(|s| s.span_id.as_deref() == Some(span_id))
            || self
                .redundant_tool_calls
                .iter()
                .any(|c| c.cluster.iter().any(|m| m == span_id))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CardError {
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("invalid failure pattern {pattern:?}: {message}")]
    Pattern { pattern: String, message: String },
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid card: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone)]
pub struct CompilerConfig {
    pub failure_patterns: FailurePatterns,
    /// Minimum normalized argument similarity for redundancy and repair.
    pub similarity_threshold: f64,
    pub arg_normalization: ArgNormalization,
    /// Externally graded outcome; overrides the session's own report.
    pub outcome: Option<Outcome>,
    pub top_k: usize,
    pub args_sample_max: usize,
    pub excerpt_max: usize,
}

impl Default for CompilerConfig {
    fn default() -> Self {
        Self {
            failure_patterns: FailurePatterns::default(),
            similarity_threshold: 0.8,
            arg_normalization: ArgNormalization::None,
            outcome: None,
            top_k: 5,
            args_sample_max: 120,
            excerpt_max: 160,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompiledCard {
    pub card: TraceCard,
    pub diagnostics: Vec<String>,
}

/// Compiles a card for a session without child sessions.
pub fn compile_card(tree: &SessionTree, pricing: &PricingTable, config: &CompilerConfig) -> Result<TraceCard, CardError> {
    Ok(compile_card_with_children(tree, &BTreeMap::new(), pricing, config)?.card)
}

/// Compiles a card; `children` supplies the trees of sessions this one
/// spawned, keyed by session key. Children that are absent are left out of
/// `sub_agents` and reported as diagnostics.
pub fn compile_card_with_children(
    tree: &SessionTree,
    children: &BTreeMap<String, &SessionTree>,
    pricing: &PricingTable,
    config: &CompilerConfig,
) -> Result<CompiledCard, CardError> {
    let costs = session_cost(tree, pricing)?;
    let mut diagnostics = Vec::new();

    let top_cost_spans = rank_spans(tree, &costs)
        .into_iter()
        .filter(|(s, cost)| *cost > Usd::ZERO && matches!(s.kind, SpanKind::Llm | SpanKind::Tool))
        .take(config.top_k)
        .map(|(span, cost)| {
            let tokens = span.tokens.unwrap_or_default();
            let sample = match span.kind {
                SpanKind::Tool => span.tool.as_ref().map(|t| t.call_signature()),
                _ => span
                    .children
                    .iter()
                    .find_map(|c| c.tool.as_ref().map(|t| t.call_signature())),
            };
            CostSpanSummary {
                span_id: Some(span.span_id.clone()),
                kind: span.kind,
                role_hint: (span.kind == SpanKind::Llm).then(|| classify_role(span, tree)),
                cost_usd: Some(cost),
                tokens_in: tokens.input,
                tokens_out: tokens.output,
                args_sample: sample.map(|s| truncate_marked(&s, config.args_sample_max)),
            }
        })
        .collect();

    let mut sub_agents = Vec::new();
    let parent_text = tree.final_output();
    for link in &tree.child_links {
        let Some(child) = children.get(&link.child_session_key) else {
            diagnostics.push(format!("child session {} not found", link.child_session_key));
            continue;
        };
        let child_total = session_cost(child, pricing)?.total.total;
        let used = match (child.final_output(), parent_text) {
            (Some(c), Some(p)) => subagent_usage(c, p),
            _ => {
                diagnostics.push(format!(
                    "child session {}: final output unavailable, usage reported as 0",
                    link.child_session_key
                ));
                0.0
            }
        };
        sub_agents.push(SubAgentSummary {
            child_session_key: link.child_session_key.clone(),
            total_cost_usd: Some(child_total),
            output_used_in_final: used,
        });
    }

    let card = TraceCard {
        session_id: tree.session_key.clone(),
        model: tree.model.clone(),
        total_cost_usd: Some(costs.total.total),
        total_tokens: costs.tokens,
        outcome: config
            .outcome
            .or(tree.outcome)
            .map(CardOutcome::from)
            .unwrap_or(CardOutcome::Unknown),
        top_cost_spans,
        redundant_tool_calls: detect_redundancy(tree, config.similarity_threshold, config.arg_normalization),
        sub_agents,
        failed_or_repaired: detect_failures(
            tree,
            &config.failure_patterns,
            config.similarity_threshold,
            config.arg_normalization,
            config.excerpt_max,
        ),
    };
    Ok(CompiledCard { card, diagnostics })
}
