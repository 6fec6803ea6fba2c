//! Trace-event wire schema.
//!
//! Every lifecycle hook emits one JSON document. [`validate_event`] turns a
//! generic document into a typed [`TraceEvent`]; [`canonical_serialize`]
//! produces the fixed byte form used for storage and hashing. Keys that are
//! not part of the schema are kept in [`TraceEvent::extras`] so newer
//! harnesses can add fields without breaking ingest.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Version of the event schema shipped in `schema/trace_event.v1.json`.
pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SessionStart,
    SessionEnd,
    LlmInput,
    LlmOutput,
    BeforeToolCall,
    AfterToolCall,
    SubagentSpawning,
    SubagentEnded,
}

impl EventKind {
    pub const ALL: [EventKind; 8] = [
        EventKind::SessionStart,
        EventKind::SessionEnd,
        EventKind::LlmInput,
        EventKind::LlmOutput,
        EventKind::BeforeToolCall,
        EventKind::AfterToolCall,
        EventKind::SubagentSpawning,
        EventKind::SubagentEnded,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::SessionStart => "session_start",
            EventKind::SessionEnd => "session_end",
            EventKind::LlmInput => "llm_input",
            EventKind::LlmOutput => "llm_output",
            EventKind::BeforeToolCall => "before_tool_call",
            EventKind::AfterToolCall => "after_tool_call",
            EventKind::SubagentSpawning => "subagent_spawning",
            EventKind::SubagentEnded => "subagent_ended",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        EventKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Provider-reported token counts, split by billing class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input: u64,
    pub output: u64,
    #[serde(rename = "cacheRead")]
    pub cache_read: u64,
    #[serde(rename = "cacheWrite")]
    pub cache_write: u64,
}

impl TokenUsage {
    pub const fn new(input: u64, output: u64, cache_read: u64, cache_write: u64) -> Self {
        Self {
            input,
            output,
            cache_read,
            cache_write,
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }

    pub fn scaled(&self, k: u64) -> Self {
        Self::new(
            self.input * k,
            self.output * k,
            self.cache_read * k,
            self.cache_write * k,
        )
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: Self) -> Self {
        TokenUsage::new(
            self.input + rhs.input,
            self.output + rhs.output,
            self.cache_read + rhs.cache_read,
            self.cache_write + rhs.cache_write,
        )
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(TokenUsage::default(), Add::add)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    #[default]
    Ok,
    Error,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Error => "error",
        }
    }
}

/// Graded task outcome. The compiler never infers it; it arrives on
/// `session_end` or from the evaluation harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Partial,
    Fail,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Partial => "partial",
            Outcome::Fail => "fail",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "success" => Some(Outcome::Success),
            "partial" => Some(Outcome::Partial),
            "fail" => Some(Outcome::Fail),
            _ => None,
        }
    }
}

/// A tool invocation as seen by the span tree: arguments from
/// `before_tool_call`, result and status from `after_tool_call`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolPayload {
    pub tool_name: String,
    pub args_text: String,
    pub result_text: Option<String>,
    pub status: Status,
}

impl ToolPayload {
    /// `name(args)`, the form used for args samples on cards.
    pub fn call_signature(&self) -> String {
        format!("{}({})", self.tool_name, self.args_text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubagentPayload {
    pub child_session_key: String,
}

/// Kind-specific content. The variant determines the event kind, so a
/// payload can never disagree with its kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    SessionStart {
        model: Option<String>,
    },
    SessionEnd {
        outcome: Option<Outcome>,
    },
    LlmInput {
        model: Option<String>,
    },
    LlmOutput {
        tokens: TokenUsage,
        text: Option<String>,
        model: Option<String>,
    },
    BeforeToolCall {
        tool_name: String,
        args_text: String,
    },
    AfterToolCall {
        tool_name: Option<String>,
        result_text: String,
        status: Status,
    },
    SubagentSpawning(SubagentPayload),
    SubagentEnded {
        child_session_key: Option<String>,
    },
}

impl Payload {
    pub fn kind(&self) -> EventKind {
        match self {
            Payload::SessionStart { .. } => EventKind::SessionStart,
            Payload::SessionEnd { .. } => EventKind::SessionEnd,
            Payload::LlmInput { .. } => EventKind::LlmInput,
            Payload::LlmOutput { .. } => EventKind::LlmOutput,
            Payload::BeforeToolCall { .. } => EventKind::BeforeToolCall,
            Payload::AfterToolCall { .. } => EventKind::AfterToolCall,
            Payload::SubagentSpawning(_) => EventKind::SubagentSpawning,
            Payload::SubagentEnded { .. } => EventKind::SubagentEnded,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub session_key: String,
    pub seq: u64,
    /// UTC milliseconds.
    pub ts: i64,
    pub span_id: Option<String>,
    pub parent_span_id: Option<String>,
    pub payload: Payload,
    pub extras: BTreeMap<String, Value>,
}

impl TraceEvent {
    pub fn new(session_key: impl Into<String>, seq: u64, ts: i64, payload: Payload) -> Self {
        Self {
            session_key: session_key.into(),
            seq,
            ts,
            span_id: None,
            parent_span_id: None,
            payload,
            extras: BTreeMap::new(),
        }
    }

    pub fn with_span(mut self, span_id: impl Into<String>) -> Self {
        self.span_id = Some(span_id.into());
        self
    }

    pub fn with_parent(mut self, parent_span_id: impl Into<String>) -> Self {
        self.parent_span_id = Some(parent_span_id.into());
        self
    }

    pub fn kind(&self) -> EventKind {
        self.payload.kind()
    }

    /// Total order within a session: seq first, timestamp as tiebreak.
    pub fn order_key(&self) -> (u64, i64) {
        (self.seq, self.ts)
    }

    /// The canonical JSON document for this event, keys sorted at every level.
    pub fn to_document(&self) -> Value {
        let mut doc: BTreeMap<&'static str, Value> = BTreeMap::new();
        doc.insert("session_key", Value::from(self.session_key.clone()));
        doc.insert("seq", Value::from(self.seq));
        doc.insert("ts", Value::from(self.ts));
        doc.insert("kind", Value::from(self.kind().as_str()));
        if let Some(id) = &self.span_id {
            doc.insert("span_id", Value::from(id.clone()));
        }
        if let Some(id) = &self.parent_span_id {
            doc.insert("parent_span_id", Value::from(id.clone()));
        }
        fn opt(doc: &mut BTreeMap<&'static str, Value>, key: &'static str, v: &Option<String>) {
            if let Some(v) = v {
                doc.insert(key, Value::from(v.clone()));
            }
        }
        match &self.payload {
            Payload::SessionStart { model } | Payload::LlmInput { model } => {
                opt(&mut doc, "model", model)
            }
            Payload::SessionEnd { outcome } => {
                if let Some(o) = outcome {
                    doc.insert("outcome", Value::from(o.as_str()));
                }
            }
            Payload::LlmOutput {
                tokens,
                text,
                model,
            } => {
                opt(&mut doc, "text", text);
                opt(&mut doc, "model", model);
                doc.insert(
                    "tokens",
                    serde_json::to_value(tokens).expect("token usage serializes"),
                );
            }
            Payload::BeforeToolCall {
                tool_name,
                args_text,
            } => {
                doc.insert("tool_name", Value::from(tool_name.clone()));
                doc.insert("args_text", Value::from(args_text.clone()));
            }
            Payload::AfterToolCall {
                tool_name,
                result_text,
                status,
            } => {
                opt(&mut doc, "tool_name", tool_name);
                doc.insert("result_text", Value::from(result_text.clone()));
                doc.insert("status", Value::from(status.as_str()));
            }
            Payload::SubagentSpawning(p) => {
                doc.insert("child_session_key", Value::from(p.child_session_key.clone()));
            }
            Payload::SubagentEnded { child_session_key } => {
                opt(&mut doc, "child_session_key", child_session_key)
            }
        }
        let mut merged: BTreeMap<String, Value> =
            doc.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        for (k, v) in &self.extras {
            merged.entry(k.clone()).or_insert_with(|| canonicalize(v));
        }
        let out: Map<String, Value> = merged.into_iter().collect();
        Value::Object(out)
    }
}

/// Recursively rebuilds objects with sorted keys.
fn canonicalize(v: &Value) -> Value {
    match v {
        Value::Object(m) => {
            let sorted: BTreeMap<&String, &Value> = m.iter().collect();
            Value::Object(
                sorted
                    .into_iter()
                    .map(|(k, v)| (k.clone(), canonicalize(v)))
                    .collect(),
            )
        }
        Value::Array(items) => Value::Array(items.iter().map(canonicalize).collect()),
        other => other.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{path}: {reason}")]
pub struct ValidationError {
    pub path: String,
    pub reason: String,
}

impl ValidationError {
    fn new(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

impl From<serde_json::Error> for DecodeError {
    fn from(e: serde_json::Error) -> Self {
        DecodeError::Json {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

const ENVELOPE_KEYS: [&str; 7] = [
    "session_key",
    "seq",
    "ts",
    "kind",
    "span_id",
    "parent_span_id",
    "schema_version",
];

fn payload_keys(kind: EventKind) -> &'static [&'static str] {
    match kind {
        EventKind::SessionStart | EventKind::LlmInput => &["model"],
        EventKind::SessionEnd => &["outcome"],
        EventKind::LlmOutput => &["tokens", "text", "model"],
        EventKind::BeforeToolCall => &["tool_name", "args_text"],
        EventKind::AfterToolCall => &["tool_name", "result_text", "status"],
        EventKind::SubagentSpawning | EventKind::SubagentEnded => &["child_session_key"],
    }
}

struct Fields<'a> {
    map: &'a Map<String, Value>,
}

impl<'a> Fields<'a> {
    fn get(&self, key: &str) -> Option<&'a Value> {
        match self.map.get(key) {
            None | Some(Value::Null) => None,
            Some(v) => Some(v),
        }
    }

    fn string(&self, key: &str) -> Result<Option<String>, ValidationError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(ValidationError::new(key, "expected a string")),
        }
    }

    fn required_string(&self, key: &str) -> Result<String, ValidationError> {
        self.string(key)?
            .ok_or_else(|| ValidationError::new(key, "missing required field"))
    }

    fn id(&self, key: &str) -> Result<Option<String>, ValidationError> {
        match self.string(key)? {
            Some(s) if s.is_empty() => Err(ValidationError::new(key, "must not be empty")),
            other => Ok(other),
        }
    }

    fn required_id(&self, key: &str) -> Result<String, ValidationError> {
        self.id(key)?
            .ok_or_else(|| ValidationError::new(key, "missing required field"))
    }
}

fn count(path: &str, v: &Value) -> Result<u64, ValidationError> {
    v.as_u64()
        .ok_or_else(|| ValidationError::new(path, "expected a non-negative integer"))
}

fn parse_tokens(v: &Value) -> Result<TokenUsage, ValidationError> {
    let Value::Object(m) = v else {
        return Err(ValidationError::new("tokens", "expected an object"));
    };
    let mut usage = TokenUsage::default();
    for (k, v) in m {
        let path = format!("tokens.{k}");
        let slot = match k.as_str() {
            "input" => &mut usage.input,
            "output" => &mut usage.output,
            "cacheRead" => &mut usage.cache_read,
            "cacheWrite" => &mut usage.cache_write,
            _ => return Err(ValidationError::new(path, "unknown token class")),
        };
        *slot = count(&path, v)?;
    }
    for required in ["input", "output"] {
        if !m.contains_key(required) {
            return Err(ValidationError::new(
                format!("tokens.{required}"),
                "missing required field",
            ));
        }
    }
    Ok(usage)
}

/// Validates one raw event document.
pub fn validate_event(raw: &Value) -> Result<TraceEvent, ValidationError> {
    let Value::Object(map) = raw else {
        return Err(ValidationError::new("$", "expected an object"));
    };
    let f = Fields { map };

    let kind = match f.get("kind") {
        None => return Err(ValidationError::new("kind", "missing required field")),
        Some(Value::String(s)) => {
            EventKind::parse(s).ok_or_else(|| ValidationError::new("kind", "unknown event kind"))?
        }
        Some(_) => return Err(ValidationError::new("kind", "expected a string")),
    };
    let session_key = f.required_id("session_key")?;
    let seq = match f.get("seq") {
        None => return Err(ValidationError::new("seq", "missing required field")),
        Some(v) => count("seq", v)?,
    };
    let ts = match f.get("ts") {
        None => return Err(ValidationError::new("ts", "missing required field")),
        Some(v) => v
            .as_i64()
            .ok_or_else(|| ValidationError::new("ts", "expected integer milliseconds"))?,
    };
    if let Some(version) = f.get("schema_version") {
        if version.as_str() != Some(SCHEMA_VERSION) {
            return Err(ValidationError::new(
                "schema_version",
                format!("unsupported schema version, expected \"{SCHEMA_VERSION}\""),
            ));
        }
    }
    let span_id = f.id("span_id")?;
    let parent_span_id = f.id("parent_span_id")?;

    let payload = match kind {
        EventKind::SessionStart => Payload::SessionStart {
            model: f.string("model")?,
        },
        EventKind::SessionEnd => Payload::SessionEnd {
            outcome: match f.string("outcome")? {
                None => None,
                Some(s) => Some(Outcome::parse(&s).ok_or_else(|| {
                    ValidationError::new("outcome", "expected one of success, partial, fail")
                })?),
            },
        },
        EventKind::LlmInput => Payload::LlmInput {
            model: f.string("model")?,
        },
        EventKind::LlmOutput => Payload::LlmOutput {
            tokens: match f.get("tokens") {
                None => return Err(ValidationError::new("tokens", "missing required field")),
                Some(v) => parse_tokens(v)?,
            },
            text: f.string("text")?,
            model: f.string("model")?,
        },
        EventKind::BeforeToolCall => Payload::BeforeToolCall {
            tool_name: f.required_id("tool_name")?,
            args_text: f.required_string("args_text")?,
        },
        EventKind::AfterToolCall => Payload::AfterToolCall {
            tool_name: f.id("tool_name")?,
            result_text: f.required_string("result_text")?,
            status: match f.required_string("status")?.as_str() {
                "ok" => Status::Ok,
                "error" => Status::Error,
                _ => return Err(ValidationError::new("status", "expected ok or error")),
            },
        },
        EventKind::SubagentSpawning => Payload::SubagentSpawning(SubagentPayload {
            child_session_key: f.required_id("child_session_key")?,
        }),
        EventKind::SubagentEnded => Payload::SubagentEnded {
            child_session_key: f.id("child_session_key")?,
        },
    };

    let known = payload_keys(kind);
    let extras = map
        .iter()
        .filter(|(k, _)| !ENVELOPE_KEYS.contains(&k.as_str()) && !known.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), canonicalize(v)))
        .collect();

    Ok(TraceEvent {
        session_key,
        seq,
        ts,
        span_id,
        parent_span_id,
        payload,
        extras,
    })
}

/// Compact JSON, keys sorted at every level.
pub fn canonical_serialize(event: &TraceEvent) -> Vec<u8> {
    serde_json::to_vec(&event.to_document()).expect("event documents always serialize")
}

pub fn canonical_deserialize(bytes: &[u8]) -> Result<TraceEvent, DecodeError> {
    let raw: Value = serde_json::from_slice(bytes)?;
    Ok(validate_event(&raw)?)
}
