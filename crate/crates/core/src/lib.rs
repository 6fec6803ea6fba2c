//! Trace events, span trees, cost attribution, trace cards, skill
//! distillation and ablation evaluation for LLM agent sessions.

pub mod card;
pub mod cost;
pub mod distill;
pub mod eval;
pub mod event;
pub mod log;
pub mod render;
pub mod similarity;
pub mod span;
pub mod synth;

pub use cost::{CostBreakdown, PricingTable, Usd};
pub use event::{EventKind, Outcome, Payload, Status, TokenUsage, TraceEvent};
pub use log::SessionLog;
pub use span::{build_tree, SessionTree, Span, SpanKind};
