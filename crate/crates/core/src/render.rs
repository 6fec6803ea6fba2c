//! Plain-text views of span trees: an indented tree and a Gantt-style
//! timeline.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::cost::SessionCost;
use crate::span::{CallGraph, CallNode, SessionTree, Span, SpanKind};

const LABEL_WIDTH: usize = 32;

fn label(span: &Span) -> String {
    match span.kind {
        SpanKind::Llm => match span.turn_index {
            Some(t) => format!("llm turn {t}"),
            None => "llm".to_string(),
        },
        SpanKind::Tool => match &span.tool {
            Some(t) => t.call_signature(),
            None => "tool".to_string(),
        },
        SpanKind::Subagent => format!(
            "subagent {}",
            span.child_session_key.as_deref().unwrap_or("?")
        ),
    }
}

fn clip(s: &str, width: usize) -> String {
    if s.chars().count() <= width {
        return s.to_string();
    }
    let mut out: String = s.chars().take(width.saturating_sub(1)).collect();
    out.push('…');
    out
}

fn span_line(out: &mut String, span: &Span, depth: usize, costs: Option<&SessionCost>) {
    let _ = write!(
        out,
        "{}{} [{}] {} {}ms",
        "  ".repeat(depth),
        span.span_id,
        span.kind.as_str(),
        clip(&label(span), 60),
        span.duration_ms()
    );
    if span.status == crate::event::Status::Error {
        out.push_str(" error");
    }
    if let Some(costs) = costs {
        if span.kind == SpanKind::Llm {
            let _ = write!(out, " ${}", costs.span(&span.span_id));
        }
    }
    out.push('\n');
}

fn tree_lines(
    out: &mut String,
    span: &Span,
    depth: usize,
    costs: Option<&SessionCost>,
    attach: &dyn Fn(&mut String, &Span, usize),
) {
    span_line(out, span, depth, costs);
    attach(out, span, depth + 1);
    for c in &span.children {
        tree_lines(out, c, depth + 1, costs, attach);
    }
}

/// One line per span, children indented under their parent. Costs are
/// shown on llm spans when `costs` is given.
pub fn render_tree(tree: &SessionTree, costs: Option<&SessionCost>) -> String {
    let mut out = String::new();
    for root in &tree.roots {
        tree_lines(&mut out, root, 0, costs, &|_, _, _| {});
    }
    out
}

/// Tree view of a multi-session run: each child session's spans appear as
/// an indented block under the span that spawned it.
pub fn render_call_graph(graph: &CallGraph<'_>, costs: &BTreeMap<String, SessionCost>) -> String {
    fn node(out: &mut String, n: &CallNode<'_>, depth: usize, costs: &BTreeMap<String, SessionCost>) {
        let _ = writeln!(
            out,
            "{}session {} ({})",
            "  ".repeat(depth),
            n.tree.session_key,
            n.tree.model
        );
        let attach = |out: &mut String, span: &Span, d: usize| {
            for child in n.children.iter().filter(|c| c.parent_span_id == span.span_id) {
                match &child.node {
                    Some(c) => node(out, c, d, costs),
                    None => {
                        let _ = writeln!(out, "{}session {} (unresolved)", "  ".repeat(d), child.child_session_key);
                    }
                }
            }
        };
        for root in &n.tree.roots {
            tree_lines(out, root, depth + 1, costs.get(&n.tree.session_key), &attach);
        }
    }
    let mut out = String::new();
    for root in &graph.roots {
        node(&mut out, root, 0, costs);
    }
    out
}

/// Gantt-style rendering: one row per span, bars positioned and sized in
/// proportion to wall-clock time over `width` columns. Every span gets at
/// least one column.
pub fn render_timeline(tree: &SessionTree, width: usize) -> String {
    let width = width.max(1) as i64;
    let total = (tree.end - tree.start).max(1);
    let col = |t: i64| ((t - tree.start).clamp(0, total) * width / total) as usize;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<LABEL_WIDTH$} |{}| {}ms",
        format!("session {}", clip(&tree.session_key, LABEL_WIDTH - 8)),
        "-".repeat(width as usize),
        tree.end - tree.start
    );
    for (span, depth) in with_depth(tree) {
        let name = format!("{}{} {}", " ".repeat(depth), span.span_id, label(span));
        let from = col(span.start).min(width as usize - 1);
        let len = (span.duration_ms() * width / total).max(1) as usize;
        let len = len.min(width as usize - from);
        let fill = if span.kind == SpanKind::Llm { '=' } else { '#' };
        let _ = writeln!(
            out,
            "{:<LABEL_WIDTH$} |{}{}{}| {}ms",
            clip(&name, LABEL_WIDTH),
            " ".repeat(from),
            fill.to_string().repeat(len),
            " ".repeat(width as usize - from - len),
            span.duration_ms()
        );
    }
    out
}

fn with_depth(tree: &SessionTree) -> Vec<(&Span, usize)> {
    fn go<'a>(s: &'a Span, d: usize, out: &mut Vec<(&'a Span, usize)>) {
        out.push((s, d));
        for c in &s.children {
            go(c, d + 1, out);
        }
    }
    let mut out = Vec::new();
    for r in &tree.roots {
        go(r, 0, &mut out);
    }
    out
}
