//! Role hints, redundancy clusters, failure detection and sub-agent usage.

use regex::Regex;

use crate::event::Status;
use crate::similarity::{jaccard, normalized_similarity};
use crate::span::{SessionTree, Span, SpanKind};

use super::{CardError, FailedStep, RedundantCluster, RoleHint};

/// Default failure patterns, matched against tool result text.
pub const DEFAULT_FAILURE_PATTERNS: &[&str] = &[r"(?i)\b(error|exception|traceback|failed)\b"];

#[derive(Debug, Clone)]
pub struct FailurePatterns {
    patterns: Vec<Regex>,
}

impl FailurePatterns {
    pub fn new<S: AsRef<str>>(patterns: &[S]) -> Result<Self, CardError> {
        let patterns = patterns
            .iter()
            .map(|p| {
                Regex::new(p.as_ref()).map_err(|e| CardError::Pattern {
                    pattern: p.as_ref().to_string(),
                    message: e.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { patterns })
    }

    /// One regex per line; blank lines and `#` comments are skipped.
    pub fn parse_file(text: &str) -> Result<Self, CardError> {
        let lines: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        Self::new(&lines)
    }

    pub fn matches(&self, text: &str) -> bool {
        self.patterns.iter().any(|p| p.is_match(text))
    }
}

impl Default for FailurePatterns {
    fn default() -> Self {
        Self::new(DEFAULT_FAILURE_PATTERNS).expect("default patterns compile")
    }
}

/// Optional rewriting of tool arguments before they are compared.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ArgNormalization {
    #[default]
    None,
    /// Trim and collapse every whitespace run to one space.
    CollapseWhitespace,
}

impl ArgNormalization {
    pub fn apply(self, args: &str) -> String {
        match self {
            ArgNormalization::None => args.to_string(),
            ArgNormalization::CollapseWhitespace => args.split_whitespace().collect::<Vec<_>>().join(" "),
        }
    }
}

fn preorder_index(spans: &[&Span], id: &str) -> Option<usize> {
    spans.iter().position(|s| s.span_id == id)
}

/// Role of an llm span, first match wins:
/// 1. `error_recovery` when the most recent tool result before it failed
///    with status error (looking back no further than the previous llm span);
/// 2. `tool_call` when it issues at least one tool call;
/// 3. `final_reply` when it is the last llm span;
/// 4. `planning` on turn 0;
/// 5. `intermediate` otherwise.
pub fn classify_role(span: &Span, tree: &SessionTree) -> RoleHint {
    let spans = tree.spans();
    if let Some(pos) = preorder_index(&spans, &span.span_id) {
        for prev in spans[..pos].iter().rev() {
            match prev.kind {
                SpanKind::Llm => break,
                SpanKind::Tool => {
                    if prev.status == Status::Error {
                        return RoleHint::ErrorRecovery;
                    }
                    break;
                }
                SpanKind::Subagent => continue,
            }
        }
    }
    if span.tool_call_count() > 0 {
        return RoleHint::ToolCall;
    }
    let last_llm = spans.iter().rev().find(|s| s.kind == SpanKind::Llm);
    if last_llm.is_some_and(|l| l.span_id == span.span_id) {
        return RoleHint::FinalReply;
    }
    if span.turn_index == Some(0) {
        return RoleHint::Planning;
    }
    RoleHint::Intermediate
}

fn at_least(sim: f64, threshold: f64) -> bool {
    sim >= threshold - 1e-12
}

/// Greedy single-link clustering of same-name tool calls in span order.
/// A call joins the first existing cluster holding a member at least
/// `threshold` similar to it; otherwise it starts a new cluster. The
/// reported similarity is the weakest link that joined the cluster,
/// rounded to two decimals.
pub fn detect_redundancy(tree: &SessionTree, threshold: f64, norm: ArgNormalization) -> Vec<RedundantCluster> {
    struct Building {
        tool: String,
        members: Vec<(String, String)>,
        weakest: f64,
    }
    let mut clusters: Vec<Building> = Vec::new();
    for span in tree.tool_spans() {
        let Some(tool) = &span.tool else { continue };
        let args = norm.apply(&tool.args_text);
        let joined = clusters.iter_mut().filter(|c| c.tool == tool.tool_name).find_map(|c| {
            let best = c
                .members
                .iter()
                .map(|(_, a)| normalized_similarity(a, &args))
                .fold(f64::MIN, f64::max);
            at_least(best, threshold).then_some((c, best))
        });
        match joined {
            Some((c, best)) => {
                c.members.push((span.span_id.clone(), args));
                c.weakest = c.weakest.min(best);
            }
            None => clusters.push(Building {
                tool: tool.tool_name.clone(),
                members: vec![(span.span_id.clone(), args)],
                weakest: 1.0,
            }),
        }
    }
    clusters
        .into_iter()
        .filter(|c| c.members.len() >= 2)
        .map(|c| RedundantCluster {
            cluster: c.members.into_iter().map(|(id, _)| id).collect(),
            tool: c.tool,
            similarity: (c.weakest * 100.0).round() / 100.0,
        })
        .collect()
}

/// Truncates to at most `max` chars, the last being `…` when cut.
pub fn truncate_marked(text: &str, max: usize) -> String {
    if text.chars().count() <= max {
        return text.to_string();
    }
    let mut out: String = text.chars().take(max.saturating_sub(1)).collect();
    out.push('…');
    out
}

fn is_failed(span: &Span, patterns: &FailurePatterns) -> bool {
    let Some(tool) = &span.tool else { return false };
    span.status == Status::Error || tool.result_text.as_deref().is_some_and(|r| patterns.matches(r))
}

/// Tool calls that failed (status error or a result matching a pattern),
/// each marked repaired when a later, non-failing call to the same tool has
/// arguments at least `threshold` similar.
pub fn detect_failures(
    tree: &SessionTree,
    patterns: &FailurePatterns,
    threshold: f64,
    norm: ArgNormalization,
    excerpt_max: usize,
) -> Vec<FailedStep> {
    let tools = tree.tool_spans();
    let mut out = Vec::new();
    for (i, span) in tools.iter().enumerate() {
        if !is_failed(span, patterns) {
            continue;
        }
        let tool = span.tool.as_ref().expect("tool span carries a payload");
        let args = norm.apply(&tool.args_text);
        let repaired_by = tools[i + 1..].iter().find(|later| {
            let Some(t) = &later.tool else { return false };
            t.tool_name == tool.tool_name
                && !is_failed(later, patterns)
                && at_least(normalized_similarity(&args, &norm.apply(&t.args_text)), threshold)
        });
        let excerpt = match tool.result_text.as_deref().map(str::trim) {
            Some(r) if !r.is_empty() => r.split_whitespace().collect::<Vec<_>>().join(" "),
            _ => "status=error".to_string(),
        };
        out.push(FailedStep {
            span_id: span.span_id.clone(),
            tool: tool.tool_name.clone(),
            error_excerpt: truncate_marked(&excerpt, excerpt_max),
            repaired: repaired_by.is_some(),
            repaired_by: repaired_by.map(|s| s.span_id.clone()),
        });
    }
    out
}

/// Jaccard overlap between a child's output and the parent's final reply.
pub fn subagent_usage(child_final_output: &str, parent_final_output: &str) -> f64 {
    jaccard(child_final_output, parent_final_output)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bad_pattern_is_a_config_error() {
        assert!(matches!(FailurePatterns::new(&["("]), Err(CardError::Pattern { .. })));
        let p = FailurePatterns::parse_file("# comment\n\n(?i)denied\n").unwrap();
        assert!(p.matches("Permission DENIED"));
    }

    #[test]
    fn default_patterns_are_word_matches() {
        let p = FailurePatterns::default();
        assert!(p.matches("Traceback (most recent call last)"));
        assert!(p.matches("write FAILED"));
        assert!(!p.matches("errorless run"));
        assert!(!p.matches("ok"));
    }

    #[test]
    fn truncation_keeps_the_budget() {
        assert_eq!(truncate_marked("abc", 3), "abc");
        assert_eq!(truncate_marked("abcd", 3), "ab…");
        assert_eq!(truncate_marked(&"x".repeat(500), 120).chars().count(), 120);
    }

    #[test]
    fn whitespace_normalization() {
        assert_eq!(ArgNormalization::CollapseWhitespace.apply("  a \n\t b "), "a b");
        assert_eq!(ArgNormalization::None.apply(" a "), " a ");
    }
}
