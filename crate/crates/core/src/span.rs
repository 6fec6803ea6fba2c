//! Span-tree reconstruction from a session's event log, plus cross-session
//! sub-agent linkage.
//!
//! Pairing rules:
//! - `llm_input`/`llm_output` form one llm span. An output pairs with the
//!   open llm span named by its `span_id`, else with the most recent open one.
//!   An output with nothing to pair with still becomes a (zero-length) llm
//!   span, so every reported usage lands in exactly one span.
//! - Tool calls nest under the most recent llm turn. With no turn yet they
//!   become roots and a diagnostic is recorded.
//! - `subagent_spawning` opens a subagent span under the innermost open tool
//!   call (else the current turn) and records a child link.
//! - Spans still open at the end are closed at the `session_end` timestamp
//!   (or the last timestamp seen) with status `error`.
//!
//! Spans without a wire `span_id` are named `span-{n}`, `n` counting every
//! opened span from 1 in seq order.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::event::{Outcome, Payload, Status, TokenUsage, ToolPayload, TraceEvent};
use crate::log::SessionLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanKind {
    Llm,
    Tool,
    Subagent,
}

impl SpanKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SpanKind::Llm => "llm",
            SpanKind::Tool => "tool",
            SpanKind::Subagent => "subagent",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Span {
    pub span_id: String,
    pub kind: SpanKind,
    pub start: i64,
    pub end: i64,
    pub status: Status,
    /// Present on llm spans that received an output event.
    pub tokens: Option<TokenUsage>,
    /// Per-call model override reported on the llm events.
    pub model: Option<String>,
    pub output_text: Option<String>,
    pub tool: Option<ToolPayload>,
    pub child_session_key: Option<String>,
    /// Position in the session's llm-turn sequence; llm spans only.
    pub turn_index: Option<u32>,
    pub children: Vec<Span>,
}

impl Span {
    pub fn duration_ms(&self) -> i64 {
        self.end - self.start
    }

    /// Number of tool calls issued directly by this span.
    pub fn tool_call_count(&self) -> usize {
        self.children
            .iter()
            .filter(|c| c.kind == SpanKind::Tool)
            .count()
    }

    /// Pre-order traversal including `self`.
    pub fn walk(&self) -> Vec<&Span> {
        let mut out = Vec::new();
        fn go<'a>(s: &'a Span, out: &mut Vec<&'a Span>) {
            out.push(s);
            for c in &s.children {
                go(c, out);
            }
        }
        go(self, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChildLink {
    pub child_session_key: String,
    pub parent_span_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub seq: Option<u64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionTree {
    pub session_key: String,
    pub model: String,
    pub start: i64,
    pub end: i64,
    pub roots: Vec<Span>,
    pub outcome: Option<Outcome>,
    pub child_links: Vec<ChildLink>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Model name used when neither `session_start` nor any llm event names one.
pub const UNKNOWN_MODEL: &str = "unknown";

impl SessionTree {
    /// All spans in pre-order (seq order of opening).
    pub fn spans(&self) -> Vec<&Span> {
        self.roots.iter().flat_map(Span::walk).collect()
    }

    pub fn find(&self, span_id: &str) -> Option<&Span> {
        self.spans().into_iter().find(|s| s.span_id == span_id)
    }

    pub fn llm_spans(&self) -> Vec<&Span> {
        self.spans()
            .into_iter()
            .filter(|s| s.kind == SpanKind::Llm)
            .collect()
    }

    pub fn tool_spans(&self) -> Vec<&Span> {
        self.spans()
            .into_iter()
            .filter(|s| s.kind == SpanKind::Tool)
            .collect()
    }

    /// Output text of the last llm turn that produced any.
    pub fn final_output(&self) -> Option<&str> {
        self.llm_spans()
            .into_iter()
            .filter_map(|s| s.output_text.as_deref())
            .next_back()
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SpanError {
    #[error("session {0} has no session_start event")]
    MalformedSession(String),
    #[error("linkage cycle: {}", .0.join(" -> "))]
    LinkageCycle(Vec<String>),
    #[error("child session {child} is linked to both {first} and {second}")]
    LinkageConflict {
        child: String,
        first: String,
        second: String,
    },
}

struct Node {
    span: Span,
    children: Vec<usize>,
    open: bool,
}

#[derive(Default)]
struct Builder {
    nodes: Vec<Node>,
    roots: Vec<usize>,
    ids: HashMap<String, usize>,
    used: BTreeSet<String>,
    opened: usize,
    turns: u32,
    current_turn: Option<usize>,
    diagnostics: Vec<Diagnostic>,
    links: Vec<ChildLink>,
}

impl Builder {
    fn diag(&mut self, seq: u64, message: impl Into<String>) {
        self.diagnostics.push(Diagnostic {
            seq: Some(seq),
            message: message.into(),
        });
    }

    fn assign_id(&mut self, requested: Option<&str>) -> String {
        self.opened += 1;
        if let Some(id) = requested {
            if !self.used.contains(id) {
                self.used.insert(id.to_string());
                return id.to_string();
            }
        }
        let mut id = format!("span-{}", self.opened);
        let mut k = 1;
        while self.used.contains(&id) {
            k += 1;
            id = format!("span-{}.{k}", self.opened);
        }
        self.used.insert(id.clone());
        id
    }

    fn resolve(&self, id: Option<&str>) -> Option<usize> {
        id.and_then(|id| self.ids.get(id).copied())
    }

    fn open(&mut self, event: &TraceEvent, kind: SpanKind, parent: Option<usize>) -> usize {
        let span_id = self.assign_id(event.span_id.as_deref());
        let idx = self.nodes.len();
        self.ids.insert(span_id.clone(), idx);
        self.nodes.push(Node {
            span: Span {
                span_id,
                kind,
                start: event.ts,
                end: event.ts,
                status: Status::Ok,
                tokens: None,
                model: None,
                output_text: None,
                tool: None,
                child_session_key: None,
                turn_index: None,
                children: Vec::new(),
            },
            children: Vec::new(),
            open: true,
        });
        match parent {
            Some(p) => self.nodes[p].children.push(idx),
            None => self.roots.push(idx),
        }
        idx
    }

    /// The explicit wire parent when it resolves, else `fallback`.
    fn parent_for(&mut self, event: &TraceEvent, fallback: Option<usize>) -> Option<usize> {
        if let Some(pid) = event.parent_span_id.as_deref() {
            if let Some(idx) = self.resolve(Some(pid)) {
                return Some(idx);
            }
            self.diag(event.seq, format!("parent span {pid} not found"));
        }
        fallback
    }

    fn last_open(&self, kind: SpanKind, pred: impl Fn(&Span) -> bool) -> Option<usize> {
        (0..self.nodes.len())
            .rev()
            .find(|&i| self.nodes[i].open && self.nodes[i].span.kind == kind && pred(&self.nodes[i].span))
    }

    fn open_by_id(&self, id: Option<&str>, kind: SpanKind) -> Option<Option<usize>> {
        let id = id?;
        Some(
            self.ids
                .get(id)
                .copied()
                .filter(|&i| self.nodes[i].open && self.nodes[i].span.kind == kind),
        )
    }

    fn start_turn(&mut self, event: &TraceEvent) -> usize {
        let parent = self.parent_for(event, None);
        let idx = self.open(event, SpanKind::Llm, parent);
        self.nodes[idx].span.turn_index = Some(self.turns);
        self.turns += 1;
        self.current_turn = Some(idx);
        idx
    }

    fn apply(&mut self, event: &TraceEvent) {
        match &event.payload {
            Payload::SessionStart { .. } | Payload::SessionEnd { .. } => {}
            Payload::LlmInput { model } => {
                let idx = self.start_turn(event);
                self.nodes[idx].span.model = model.clone();
            }
            Payload::LlmOutput {
                tokens,
                text,
                model,
            } => {
                let target = match self.open_by_id(event.span_id.as_deref(), SpanKind::Llm) {
                    Some(found) => found,
                    None => self.last_open(SpanKind::Llm, |_| true),
                };
                let idx = match target {
                    Some(idx) => idx,
                    None => {
                        self.diag(event.seq, "llm_output without a matching llm_input");
                        self.start_turn(event)
                    }
                };
                let node = &mut self.nodes[idx];
                node.open = false;
                node.span.end = event.ts;
                node.span.tokens = Some(*tokens);
                node.span.output_text = text.clone();
                if model.is_some() {
                    node.span.model = model.clone();
                }
            }
            Payload::BeforeToolCall {
                tool_name,
                args_text,
            } => {
                let turn = self.current_turn;
                let parent = self.parent_for(event, turn);
                if parent.is_none() {
                    self.diag(event.seq, format!("tool call {tool_name} outside any llm turn"));
                }
                let idx = self.open(event, SpanKind::Tool, parent);
                self.nodes[idx].span.tool = Some(ToolPayload {
                    tool_name: tool_name.clone(),
                    args_text: args_text.clone(),
                    result_text: None,
                    status: Status::Ok,
                });
            }
            Payload::AfterToolCall {
                tool_name,
                result_text,
                status,
            } => {
                let target = match self.open_by_id(event.span_id.as_deref(), SpanKind::Tool) {
                    Some(found) => found,
                    None => self.last_open(SpanKind::Tool, |s| match (tool_name, &s.tool) {
                        (Some(name), Some(t)) => &t.tool_name == name,
                        _ => true,
                    }),
                };
                let Some(idx) = target else {
                    self.diag(event.seq, "after_tool_call without a matching before_tool_call");
                    return;
                };
                let node = &mut self.nodes[idx];
                node.open = false;
                node.span.end = event.ts;
                node.span.status = *status;
                if let Some(tool) = node.span.tool.as_mut() {
                    tool.result_text = Some(result_text.clone());
                    tool.status = *status;
                }
            }
            Payload::SubagentSpawning(p) => {
                let fallback = self
                    .last_open(SpanKind::Tool, |_| true)
                    .or(self.current_turn);
                let parent = self.parent_for(event, fallback);
                let idx = self.open(event, SpanKind::Subagent, parent);
                self.nodes[idx].span.child_session_key = Some(p.child_session_key.clone());
                let span_id = self.nodes[idx].span.span_id.clone();
                self.links.push(ChildLink {
                    child_session_key: p.child_session_key.clone(),
                    parent_span_id: span_id,
                });
            }
            Payload::SubagentEnded { child_session_key } => {
                let target = match self.open_by_id(event.span_id.as_deref(), SpanKind::Subagent) {
                    Some(found) => found,
                    None => self.last_open(SpanKind::Subagent, |s| match child_session_key {
                        Some(k) => s.child_session_key.as_ref() == Some(k),
                        None => true,
                    }),
                };
                let Some(idx) = target else {
                    self.diag(event.seq, "subagent_ended without a matching subagent_spawning");
                    return;
                };
                self.nodes[idx].open = false;
                self.nodes[idx].span.end = event.ts;
            }
        }
    }

    fn finish(&mut self, close_ts: i64) {
        for i in 0..self.nodes.len() {
            if self.nodes[i].open {
                let id = self.nodes[i].span.span_id.clone();
                self.diagnostics.push(Diagnostic {
                    seq: None,
                    message: format!("span {id} still open at session end; closed with error"),
                });
                let node = &mut self.nodes[i];
                node.open = false;
                node.span.end = close_ts;
                node.span.status = Status::Error;
                if let Some(tool) = node.span.tool.as_mut() {
                    tool.status = Status::Error;
                }
            }
        }
    }

    /// Materializes node `idx`, clamping it inside `parent_start` and
    /// stretching its end over its children.
    fn materialize(&self, idx: usize, parent_start: Option<i64>) -> Span {
        let node = &self.nodes[idx];
        let mut span = node.span.clone();
        if let Some(ps) = parent_start {
            span.start = span.start.max(ps);
        }
        span.end = span.end.max(span.start);
        span.children = node
            .children
            .iter()
            .map(|&c| self.materialize(c, Some(span.start)))
            .collect();
        if let Some(last) = span.children.iter().map(|c| c.end).max() {
            span.end = span.end.max(last);
        }
        span
    }
}

/// Reconstructs the span tree of one session.
pub fn build_tree(log: &SessionLog) -> Result<SessionTree, SpanError> {
    let Some(start_event) = log.events.iter().find(|e| matches!(e.payload, Payload::SessionStart { .. }))
    else {
        return Err(SpanError::MalformedSession(log.session_key.clone()));
    };
    let mut b = Builder::default();
    let mut model = match &start_event.payload {
        Payload::SessionStart { model } => model.clone(),
        _ => None,
    };
    let mut outcome = None;
    let mut end_ts = None;
    let mut seen_start = false;
    for event in &log.events {
        match &event.payload {
            Payload::SessionStart { .. } => {
                if seen_start {
                    b.diag(event.seq, "duplicate session_start ignored");
                }
                seen_start = true;
            }
            Payload::SessionEnd { outcome: o } => {
                if end_ts.is_some() {
                    b.diag(event.seq, "duplicate session_end");
                }
                end_ts = Some(event.ts);
                if o.is_some() {
                    outcome = *o;
                }
            }
            Payload::LlmInput { model: Some(m) } | Payload::LlmOutput { model: Some(m), .. }
                if model.is_none() =>
            {
                model = Some(m.clone());
            }
            _ => {}
        }
        b.apply(event);
    }
    let last_ts = log.events.iter().map(|e| e.ts).max().unwrap_or(start_event.ts);
    b.finish(end_ts.unwrap_or(last_ts));

    let roots: Vec<Span> = b.roots.iter().map(|&r| b.materialize(r, None)).collect();
    let start = start_event.ts;
    let end = roots
        .iter()
        .map(|s| s.end)
        .chain(end_ts)
        .max()
        .unwrap_or(start)
        .max(start);
    Ok(SessionTree {
        session_key: log.session_key.clone(),
        model: model.unwrap_or_else(|| UNKNOWN_MODEL.to_string()),
        start,
        end,
        roots,
        outcome,
        child_links: b.links,
        diagnostics: b.diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkTarget {
    pub parent_session_key: String,
    pub parent_span_id: String,
}

/// Child session key → the parent span that spawned it. Built from the
/// spawning events themselves, so it survives any split of a run into
/// ingest batches.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LinkageMap {
    entries: BTreeMap<String, LinkTarget>,
}

impl LinkageMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Re-inserting an identical entry is a no-op; pointing a child at a
    /// second parent is an error.
    pub fn insert(
        &mut self,
        child_session_key: impl Into<String>,
        parent_session_key: impl Into<String>,
        parent_span_id: impl Into<String>,
    ) -> Result<(), SpanError> {
        let child = child_session_key.into();
        let target = LinkTarget {
            parent_session_key: parent_session_key.into(),
            parent_span_id: parent_span_id.into(),
        };
        match self.entries.get(&child) {
            Some(existing) if *existing == target => Ok(()),
            Some(existing) => Err(SpanError::LinkageConflict {
                child,
                first: format!("{}/{}", existing.parent_session_key, existing.parent_span_id),
                second: format!("{}/{}", target.parent_session_key, target.parent_span_id),
            }),
            None => {
                self.entries.insert(child, target);
                Ok(())
            }
        }
    }

    pub fn from_trees<'a>(trees: impl IntoIterator<Item = &'a SessionTree>) -> Result<Self, SpanError> {
        let mut map = Self::new();
        for tree in trees {
            for link in &tree.child_links {
                map.insert(&link.child_session_key, &tree.session_key, &link.parent_span_id)?;
            }
        }
        Ok(map)
    }

    pub fn get(&self, child_session_key: &str) -> Option<&LinkTarget> {
        self.entries.get(child_session_key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &LinkTarget)> {
        self.entries.iter()
    }

    /// Sessions in a parent cycle, rotated to start at the smallest key.
    fn find_cycle(&self) -> Option<Vec<String>> {
        for start in self.entries.keys() {
            let mut path: Vec<&str> = vec![start.as_str()];
            let mut cur = start.as_str();
            while let Some(target) = self.entries.get(cur) {
                let next = target.parent_session_key.as_str();
                if let Some(pos) = path.iter().position(|&p| p == next) {
                    let mut cycle: Vec<String> = path[pos..].iter().map(|s| s.to_string()).collect();
                    let min = (0..cycle.len()).min_by_key(|&i| cycle[i].clone()).unwrap_or(0);
                    cycle.rotate_left(min);
                    return Some(cycle);
                }
                path.push(next);
                cur = next;
            }
        }
        None
    }
}

/// A session tree with the child sessions it spawned attached beneath
/// their spawning spans.
#[derive(Debug, Clone)]
pub struct CallNode<'a> {
    pub tree: &'a SessionTree,
    pub children: Vec<AttachedChild<'a>>,
}

#[derive(Debug, Clone)]
pub struct AttachedChild<'a> {
    pub child_session_key: String,
    pub parent_span_id: String,
    /// `None` when the child's events never arrived.
    pub node: Option<CallNode<'a>>,
}

impl AttachedChild<'_> {
    pub fn is_resolved(&self) -> bool {
        self.node.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct CallGraph<'a> {
    pub roots: Vec<CallNode<'a>>,
}

impl<'a> CallGraph<'a> {
    /// Every tree in the graph exactly once, parents before children.
    pub fn sessions(&self) -> Vec<&'a SessionTree> {
        fn go<'a>(n: &CallNode<'a>, out: &mut Vec<&'a SessionTree>) {
            out.push(n.tree);
            for c in &n.children {
                if let Some(child) = &c.node {
                    go(child, out);
                }
            }
        }
        let mut out = Vec::new();
        for r in &self.roots {
            go(r, &mut out);
        }
        out
    }

    /// Links whose child session has no tree.
    pub fn unresolved(&self) -> Vec<(&str, &str)> {
        fn go<'b>(n: &'b CallNode<'_>, out: &mut Vec<(&'b str, &'b str)>) {
            for c in &n.children {
                match &c.node {
                    Some(child) => go(child, out),
                    None => out.push((c.child_session_key.as_str(), c.parent_span_id.as_str())),
                }
            }
        }
        let mut out = Vec::new();
        for r in &self.roots {
            go(r, &mut out);
        }
        out
    }

    pub fn find(&self, session_key: &str) -> Option<&CallNode<'a>> {
        fn go<'b, 'a>(n: &'b CallNode<'a>, key: &str) -> Option<&'b CallNode<'a>> {
            if n.tree.session_key == key {
                return Some(n);
            }
            n.children
                .iter()
                .filter_map(|c| c.node.as_ref())
                .find_map(|c| go(c, key))
        }
        self.roots.iter().find_map(|r| go(r, session_key))
    }
}

/// Attaches every child session beneath its parent span. Children whose
/// events never arrived are kept as unresolved entries; a child whose
/// parent session is absent becomes a root.
pub fn resolve_links<'a>(trees: &'a [SessionTree], map: &LinkageMap) -> Result<CallGraph<'a>, SpanError> {
    if let Some(cycle) = map.find_cycle() {
        return Err(SpanError::LinkageCycle(cycle));
    }
    let by_key: BTreeMap<&str, &'a SessionTree> =
        trees.iter().map(|t| (t.session_key.as_str(), t)).collect();

    fn attach<'a>(
        tree: &'a SessionTree,
        by_key: &BTreeMap<&str, &'a SessionTree>,
        map: &LinkageMap,
    ) -> CallNode<'a> {
        let mut links: Vec<(usize, &String, &LinkTarget)> = map
            .iter()
            .filter(|(_, t)| t.parent_session_key == tree.session_key)
            .map(|(child, t)| {
                let order = tree
                    .child_links
                    .iter()
                    .position(|l| &l.child_session_key == child)
                    .unwrap_or(usize::MAX);
                (order, child, t)
            })
            .collect();
        links.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        CallNode {
            tree,
            children: links
                .into_iter()
                .map(|(_, child, target)| AttachedChild {
                    child_session_key: child.clone(),
                    parent_span_id: target.parent_span_id.clone(),
                    node: by_key.get(child.as_str()).map(|t| attach(t, by_key, map)),
                })
                .collect(),
        }
    }

    let roots = by_key
        .values()
        .filter(|t| match map.get(&t.session_key) {
            None => true,
            Some(target) => !by_key.contains_key(target.parent_session_key.as_str()),
        })
        .map(|t| attach(t, &by_key, map))
        .collect();
    Ok(CallGraph { roots })
}
