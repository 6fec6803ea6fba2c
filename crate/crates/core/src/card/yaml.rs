//! Canonical YAML for TraceCards.
//!
//! The emitter is hand-written so key order, quoting and number formatting
//! are fixed: strings are double-quoted, money is the shortest exact
//! decimal, fractions use the shortest round-tripping float text. Parsing
//! goes through serde_yaml.

use std::fmt::Write;

use serde::Deserialize;
use serde_yaml::Value;

use crate::cost::Usd;
use crate::event::TokenUsage;
use crate::span::SpanKind;

use super::{CardError, CardOutcome, CostSpanSummary, FailedStep, RedundantCluster, RoleHint, SubAgentSummary, TraceCard};

fn quoted(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

fn float(f: f64) -> String {
    let s = f.to_string();
    if s.contains(['.', 'e', 'E']) || !f.is_finite() {
        s
    } else {
        format!("{s}.0")
    }
}

pub fn emit_yaml(card: &TraceCard) -> String {
    let mut out = String::new();
    let o = &mut out;
    let _ = writeln!(o, "session_id: {}", quoted(&card.session_id));
    let _ = writeln!(o, "model: {}", quoted(&card.model));
    if let Some(total) = card.total_cost_usd {
        let _ = writeln!(o, "total_cost_usd: {}", total.to_exact_decimal());
    }
    let t = &card.total_tokens;
    let _ = writeln!(o, "total_tokens:");
    let _ = writeln!(o, "  input: {}", t.input);
    let _ = writeln!(o, "  output: {}", t.output);
    let _ = writeln!(o, "  cacheRead: {}", t.cache_read);
    let _ = writeln!(o, "  cacheWrite: {}", t.cache_write);
    let _ = writeln!(o, "outcome: {}", quoted(card.outcome.as_str()));

    list(o, "top_cost_spans", &card.top_cost_spans, |o, s| {
        let mut first = true;
        let mut key = |o: &mut String, k: &str, v: String| {
            let lead = if first { "  - " } else { "    " };
            first = false;
            let _ = writeln!(o, "{lead}{k}: {v}");
        };
        if let Some(id) = &s.span_id {
            key(o, "span_id", quoted(id));
        }
        key(o, "kind", s.kind.as_str().to_string());
        if let Some(r) = s.role_hint {
            key(o, "role_hint", r.as_str().to_string());
        }
        if let Some(c) = s.cost_usd {
            key(o, "cost_usd", c.to_exact_decimal());
        }
        key(o, "tokens", format!("{{in: {}, out: {}}}", s.tokens_in, s.tokens_out));
        if let Some(a) = &s.args_sample {
            key(o, "args_sample", quoted(a));
        }
    });
    list(o, "redundant_tool_calls", &card.redundant_tool_calls, |o, c| {
        let ids: Vec<String> = c.cluster.iter().map(|id| quoted(id)).collect();
        let _ = writeln!(o, "  - cluster: [{}]", ids.join(", "));
        let _ = writeln!(o, "    tool: {}", quoted(&c.tool));
        let _ = writeln!(o, "    similarity: {}", float(c.similarity));
    });
    list(o, "sub_agents", &card.sub_agents, |o, s| {
        let _ = writeln!(o, "  - child_session_key: {}", quoted(&s.child_session_key));
        if let Some(c) = s.total_cost_usd {
            let _ = writeln!(o, "    total_cost_usd: {}", c.to_exact_decimal());
        }
        let _ = writeln!(o, "    output_used_in_final: {}", float(s.output_used_in_final));
    });
    list(o, "failed_or_repaired", &card.failed_or_repaired, |o, f| {
        let _ = writeln!(o, "  - span_id: {}", quoted(&f.span_id));
        let _ = writeln!(o, "    tool: {}", quoted(&f.tool));
        let _ = writeln!(o, "    error_excerpt: {}", quoted(&f.error_excerpt));
        let _ = writeln!(o, "    repaired: {}", f.repaired);
        if let Some(by) = &f.repaired_by {
            let _ = writeln!(o, "    repaired_by: {}", quoted(by));
        }
    });
    out
}

fn list<T>(o: &mut String, name: &str, items: &[T], mut item: impl FnMut(&mut String, &T)) {
    if items.is_empty() {
        let _ = writeln!(o, "{name}: []");
        return;
    }
    let _ = writeln!(o, "{name}:");
    for i in items {
        item(o, i);
    }
}

/// Splits lines holding several `key: value` pairs separated by two or more
/// spaces (`input: 12840  output: 3210`) into one pair per line. Quoted
/// text and flow collections are left alone.
fn split_compact_pairs(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        let indent = line.len() - line.trim_start_matches(' ').len();
        let body = &line[indent..];
        let cont = if body.starts_with("- ") { indent + 2 } else { indent };
        let mut cuts = Vec::new();
        let (mut dq, mut sq, mut depth, mut escaped) = (false, false, 0i32, false);
        let bytes = body.as_bytes();
        for (i, &b) in bytes.iter().enumerate() {
            if dq {
                match (escaped, b) {
                    (true, _) => escaped = false,
                    (false, b'\\') => escaped = true,
                    (false, b'"') => dq = false,
                    _ => {}
                }
                continue;
            }
            if sq {
                if b == b'\'' {
                    sq = false;
                }
                continue;
            }
            match b {
                b'"' => dq = true,
                b'\'' => sq = true,
                b'{' | b'[' => depth += 1,
                b'}' | b']' => depth -= 1,
                b'#' if i > 0 && bytes[i - 1] == b' ' => break,
                b' ' if depth == 0 && i > 0 && bytes[i - 1] == b' ' => {
                    let rest = &body[i + 1..];
                    if !rest.starts_with(' ') && starts_with_key(rest) && body[..i].contains(": ") {
                        cuts.push(i + 1);
                    }
                }
                _ => {}
            }
        }
        let mut start = 0;
        for cut in cuts {
            out.push_str(&" ".repeat(if start == 0 { indent } else { cont }));
            out.push_str(body[start..cut].trim_end());
            out.push('\n');
            start = cut;
        }
        out.push_str(&" ".repeat(if start == 0 { indent } else { cont }));
        out.push_str(&body[start..]);
        out.push('\n');
    }
    out
}

fn starts_with_key(s: &str) -> bool {
    let key_len = s
        .bytes()
        .take_while(|b| b.is_ascii_alphanumeric() || *b == b'_')
        .count();
    key_len > 0
        && !s.as_bytes()[0].is_ascii_digit()
        && s[key_len..].starts_with(':')
        && s[key_len + 1..].chars().next().is_none_or(|c| c == ' ')
}

#[derive(Deserialize)]
struct CardDoc {
    session_id: String,
    model: String,
    #[serde(default)]
    total_cost_usd: Option<f64>,
    total_tokens: TokenUsage,
    outcome: String,
    #[serde(default)]
    top_cost_spans: Vec<SpanDoc>,
    #[serde(default)]
    redundant_tool_calls: Vec<ClusterDoc>,
    #[serde(default)]
    sub_agents: Vec<SubAgentDoc>,
    #[serde(default)]
    failed_or_repaired: Vec<FailedDoc>,
}

#[derive(Deserialize)]
struct SpanDoc {
    #[serde(default)]
    span_id: Option<String>,
    kind: String,
    #[serde(default)]
    role_hint: Option<String>,
    #[serde(default)]
    cost_usd: Option<f64>,
    tokens: SpanTokensDoc,
    #[serde(default)]
    args_sample: Option<String>,
}

#[derive(Deserialize)]
struct SpanTokensDoc {
    #[serde(rename = "in")]
    input: u64,
    #[serde(rename = "out")]
    output: u64,
}

#[derive(Deserialize)]
struct ClusterDoc {
    cluster: Vec<String>,
    tool: String,
    similarity: f64,
}

#[derive(Deserialize)]
struct SubAgentDoc {
    child_session_key: String,
    #[serde(default)]
    total_cost_usd: Option<f64>,
    output_used_in_final: f64,
}

#[derive(Deserialize)]
struct FailedDoc {
    span_id: String,
    tool: String,
    error_excerpt: String,
    repaired: bool,
    #[serde(default)]
    repaired_by: Option<String>,
}

fn money(f: f64, field: &str) -> Result<Usd, CardError> {
    if !f.is_finite() || f < 0.0 {
        return Err(CardError::Invalid(format!("{field}: must be a non-negative amount")));
    }
    Usd::parse_decimal(&f.to_string()).ok_or_else(|| CardError::Invalid(format!("{field}: not a decimal amount")))
}

fn fraction(f: f64, field: &str) -> Result<f64, CardError> {
    if (0.0..=1.0).contains(&f) {
        Ok(f)
    } else {
        Err(CardError::Invalid(format!("{field}: {f} is outside [0, 1]")))
    }
}

/// Parses card YAML. Also accepts the compact layout with several
/// `key: value` pairs per line.
pub fn parse_yaml(text: &str) -> Result<TraceCard, CardError> {
    let text = split_compact_pairs(text);
    let value: Value = serde_yaml::from_str(&text).map_err(yaml_error)?;
    let doc: CardDoc = serde_yaml::from_value(value).map_err(yaml_error)?;
    let outcome =
        CardOutcome::parse(&doc.outcome).ok_or_else(|| CardError::Invalid(format!("outcome: unknown value {:?}", doc.outcome)))?;
    let top_cost_spans = doc
        .top_cost_spans
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let kind = match s.kind.as_str() {
                "llm" => SpanKind::Llm,
                "tool" => SpanKind::Tool,
                other => return Err(CardError::Invalid(format!("top_cost_spans[{i}].kind: unknown value {other:?}"))),
            };
            let role_hint = s
                .role_hint
                .map(|r| RoleHint::parse(&r).ok_or_else(|| CardError::Invalid(format!("top_cost_spans[{i}].role_hint: unknown value {r:?}"))))
                .transpose()?;
            Ok(CostSpanSummary {
                span_id: s.span_id,
                kind,
                role_hint,
                cost_usd: s.cost_usd.map(|c| money(c, "cost_usd")).transpose()?,
                tokens_in: s.tokens.input,
                tokens_out: s.tokens.output,
                args_sample: s.args_sample,
            })
        })
        .collect::<Result<_, _>>()?;
    let redundant_tool_calls = doc
        .redundant_tool_calls
        .into_iter()
        .map(|c| {
            Ok(RedundantCluster {
                similarity: fraction(c.similarity, "similarity")?,
                cluster: c.cluster,
                tool: c.tool,
            })
        })
        .collect::<Result<_, CardError>>()?;
    let sub_agents = doc
        .sub_agents
        .into_iter()
        .map(|s| {
            Ok(SubAgentSummary {
                child_session_key: s.child_session_key,
                total_cost_usd: s.total_cost_usd.map(|c| money(c, "total_cost_usd")).transpose()?,
                output_used_in_final: fraction(s.output_used_in_final, "output_used_in_final")?,
            })
        })
        .collect::<Result<_, CardError>>()?;
    let failed_or_repaired = doc
        .failed_or_repaired
        .into_iter()
        .map(|f| FailedStep {
            span_id: f.span_id,
            tool: f.tool,
            error_excerpt: f.error_excerpt,
            repaired: f.repaired,
            repaired_by: f.repaired_by,
        })
        .collect();
    Ok(TraceCard {
        session_id: doc.session_id,
        model: doc.model,
        total_cost_usd: doc.total_cost_usd.map(|c| money(c, "total_cost_usd")).transpose()?,
        total_tokens: doc.total_tokens,
        outcome,
        top_cost_spans,
        redundant_tool_calls,
        sub_agents,
        failed_or_repaired,
    })
}

fn yaml_error(e: serde_yaml::Error) -> CardError {
    let (line, column) = e.location().map(|l| (l.line(), l.column())).unwrap_or((0, 0));
    CardError::Parse {
        line,
        column,
        message: e.to_string(),
    }
}
