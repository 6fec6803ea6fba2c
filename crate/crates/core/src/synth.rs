//! Deterministic synthetic sessions for tests, benchmarks and demos.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use std::collections::BTreeMap;

use crate::cost::{Usd, DEFAULT_MODEL};
use crate::distill::{Condition, Mismatch, TaskRecord};
use crate::eval::{Quality, TaskOutcome};
use crate::event::{Outcome, Payload, Status, SubagentPayload, TokenUsage, TraceEvent};
use crate::log::SessionLog;

/// Appends events for one session with consecutive seqs and a fixed clock
/// step.
#[derive(Debug, Clone)]
pub struct SessionScript {
    key: String,
    seq: u64,
    ts: i64,
    step: i64,
    events: Vec<TraceEvent>,
}

impl SessionScript {
    pub fn new(key: impl Into<String>, model: Option<&str>, start_ts: i64) -> Self {
        let mut s = Self {
            key: key.into(),
            seq: 0,
            ts: start_ts,
            step: 100,
            events: Vec::new(),
        };
        s.push(Payload::SessionStart {
            model: model.map(str::to_string),
        });
        s
    }

    pub fn step(mut self, ms: i64) -> Self {
        self.step = ms;
        self
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn push(&mut self, payload: Payload) -> &mut Self {
        self.push_after(self.step, payload)
    }

    /// Pushes `payload` `delay` ms after the previous event.
    pub fn push_after(&mut self, delay: i64, payload: Payload) -> &mut Self {
        if !self.events.is_empty() {
            self.ts += delay;
        }
        self.events
            .push(TraceEvent::new(&self.key, self.seq, self.ts, payload));
        self.seq += 1;
        self
    }

    /// One llm turn: input then output.
    pub fn llm(&mut self, tokens: TokenUsage, text: &str) -> &mut Self {
        self.push(Payload::LlmInput { model: None });
        self.push(Payload::LlmOutput {
            tokens,
            text: Some(text.to_string()),
            model: None,
        })
    }

    pub fn tool(&mut self, name: &str, args: &str, result: &str, status: Status) -> &mut Self {
        self.push(Payload::BeforeToolCall {
            tool_name: name.to_string(),
            args_text: args.to_string(),
        });
        self.push(Payload::AfterToolCall {
            tool_name: Some(name.to_string()),
            result_text: result.to_string(),
            status,
        })
    }

    /// A `spawn_agent` tool call that wraps a sub-agent spawn.
    pub fn spawn(&mut self, child_key: &str, task: &str) -> &mut Self {
        self.push(Payload::BeforeToolCall {
            tool_name: "spawn_agent".into(),
            args_text: task.to_string(),
        });
        self.push(Payload::SubagentSpawning(SubagentPayload {
            child_session_key: child_key.to_string(),
        }));
        self.push(Payload::SubagentEnded {
            child_session_key: Some(child_key.to_string()),
        });
        self.push(Payload::AfterToolCall {
            tool_name: Some("spawn_agent".into()),
            result_text: "sub-agent finished".into(),
            status: Status::Ok,
        })
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn end(&mut self, outcome: Option<Outcome>) -> SessionLog {
        self.push(Payload::SessionEnd { outcome });
        self.log()
    }

    pub fn log(&self) -> SessionLog {
        SessionLog::from_events(self.key.clone(), self.events.clone()).expect("scripted events are consistent")
    }
}

pub const REFERENCE_SESSION_KEY: &str = "sb-task-47484";

/// Four llm turns and four tool calls shaped like the reference card: the
/// two `read_file` calls land on span-3 and span-7, one character apart
/// over 17 (similarity 0.94), and the llm usage sums to
/// input 12840 / output 3210 / cacheRead 8450 / cacheWrite 1200.
pub fn reference_session() -> SessionLog {
    let mut s = SessionScript::new(REFERENCE_SESSION_KEY, Some(DEFAULT_MODEL), 1_700_000_000_000);
    s.llm(TokenUsage::new(4200, 890, 2000, 1200), "Inspect the workbook first.")
        .tool("list_dir", "'data'", "input.xlsx", Status::Ok)
        .tool("read_file", "'data/input.xlsx'", "Sheet1: 120 rows", Status::Ok)
        .llm(TokenUsage::new(3800, 720, 2600, 0), "Write the totals column.")
        .tool("write_cells", "'output.xlsx', 'D2:D121'", "wrote 120 cells", Status::Ok)
        .llm(TokenUsage::new(2740, 620, 2050, 0), "Re-check the source data.")
        .tool("read_file", "'data/Input.xlsx'", "Sheet1: 120 rows", Status::Ok)
        .llm(
            TokenUsage::new(2100, 980, 1800, 0),
            "Totals written to output.xlsx column D for all 120 rows.",
        );
    s.end(Some(Outcome::Success))
}

const WORDS: &[&str] = &[
    "alpha", "budget", "column", "delta", "export", "filter", "ledger", "matrix", "north", "orbit", "pivot",
    "quarter", "region", "summary", "total", "update", "vector", "weekly", "yield", "zone",
];

const TOOLS: &[&str] = &["read_file", "write_cells", "list_dir", "run_python", "search"];

fn random_word_text(rng: &mut ChaCha8Rng, words: usize) -> String {
    (0..words)
        .map(|_| *WORDS.choose(rng).expect("non-empty"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn random_ident(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
}

fn random_tokens(rng: &mut ChaCha8Rng) -> TokenUsage {
    TokenUsage::new(
        rng.gen_range(200..6000),
        rng.gen_range(20..1500),
        rng.gen_range(0..4000),
        if rng.gen_bool(0.2) { rng.gen_range(0..1500) } else { 0 },
    )
}

/// A random single-agent session with `turns` llm turns, each issuing up to
/// three tool calls (some failing).
pub fn random_session(seed: u64, key: &str, turns: usize) -> SessionLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = SessionScript::new(key, Some(DEFAULT_MODEL), 1_700_000_000_000 + seed as i64);
    for turn in 0..turns {
        let text = random_word_text(&mut rng, 8);
        s.push_after(rng.gen_range(1..50), Payload::LlmInput { model: None });
        s.push_after(
            rng.gen_range(100..3000),
            Payload::LlmOutput {
                tokens: random_tokens(&mut rng),
                text: Some(text),
                model: None,
            },
        );
        if turn + 1 == turns {
            break;
        }
        for _ in 0..rng.gen_range(0..=3) {
            let tool = *TOOLS.choose(&mut rng).expect("non-empty");
            let args = format!("'{}.txt'", random_ident(&mut rng, 12));
            let (result, status) = match rng.gen_range(0..10) {
                0 => ("Traceback (most recent call last): boom".to_string(), Status::Ok),
                1 => ("permission denied".to_string(), Status::Error),
                _ => (random_word_text(&mut rng, 4), Status::Ok),
            };
            s.push_after(
                rng.gen_range(1..20),
                Payload::BeforeToolCall {
                    tool_name: tool.into(),
                    args_text: args,
                },
            );
            s.push_after(
                rng.gen_range(5..800),
                Payload::AfterToolCall {
                    tool_name: Some(tool.into()),
                    result_text: result,
                    status,
                },
            );
        }
    }
    s.end(Some(Outcome::Success))
}

/// A session with exactly `spans` spans: alternating llm turns and tool
/// calls with distinct arguments, plus one re-read cluster.
pub fn large_session(seed: u64, key: &str, spans: usize) -> SessionLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = SessionScript::new(key, Some(DEFAULT_MODEL), 1_700_000_000_000);
    let mut made = 0;
    let mut turn = 0;
    while made < spans {
        s.llm(random_tokens(&mut rng), &random_word_text(&mut rng, 6));
        made += 1;
        turn += 1;
        if made < spans {
            let args = if turn % 40 == 1 {
                "'data/input.xlsx'".to_string()
            } else {
                format!("'{}/{}.csv'", random_ident(&mut rng, 6), random_ident(&mut rng, 10))
            };
            s.tool(TOOLS[turn % TOOLS.len()], &args, "ok", Status::Ok);
            made += 1;
        }
    }
    s.end(Some(Outcome::Success))
}

/// Applies `edits` substitutions at distinct positions using digits, which
/// never occur in the lowercase input, so the edit distance is exactly
/// `edits`.
fn perturb(rng: &mut ChaCha8Rng, base: &str, edits: usize) -> String {
    let mut chars: Vec<char> = base.chars().collect();
    let mut positions: Vec<usize> = (0..chars.len()).collect();
    positions.shuffle(rng);
    for &p in positions.iter().take(edits) {
        chars[p] = char::from(b'0' + rng.gen_range(0..10u8));
    }
    chars.into_iter().collect()
}

/// One session of a redundancy audit corpus and the clusters planted in it.
#[derive(Debug, Clone)]
pub struct AuditSession {
    pub log: SessionLog,
    /// Span ids of each planted cluster, in span order.
    pub planted: Vec<Vec<String>>,
    /// Span-id pairs deliberately placed just under the threshold.
    pub near_misses: Vec<(String, String)>,
}

/// Ten sessions: the first five each carry one planted cluster of 2-3
/// near-identical calls (each at most 3 substitutions away from a
/// shared 30-character base, so any two are at least 0.8 similar); the last
/// five carry none. Session 9 also holds a same-tool pair at similarity
/// exactly 0.78 (11 substitutions over 50 characters).
pub fn redundancy_audit_corpus(seed: u64) -> Vec<AuditSession> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..10 {
        let key = format!("audit-{i:02}");
        let mut s = SessionScript::new(&key, Some(DEFAULT_MODEL), 1_700_000_000_000);
        // span ids are synthesized in opening order: llm spans and tool spans
        // alternate as llm, tool, tool, ...
        let mut next_span = 0usize;
        let mut id = || {
            next_span += 1;
            format!("span-{next_span}")
        };
        let mut planted = Vec::new();
        let mut near_misses = Vec::new();
        let mut calls: Vec<(String, String)> = (0..6)
            .map(|_| {
                (
                    TOOLS[rng.gen_range(0..TOOLS.len())].to_string(),
                    random_ident(&mut rng, 24),
                )
            })
            .collect();
        let mut planted_args = Vec::new();
        if i < 5 {
            let tool = TOOLS[i % TOOLS.len()].to_string();
            let base = random_ident(&mut rng, 30);
            let copies = rng.gen_range(2..=3);
            for _ in 0..copies {
                let edits = rng.gen_range(0..=3);
                planted_args.push((tool.clone(), perturb(&mut rng, &base, edits)));
            }
        }
        let mut near = Vec::new();
        if i == 9 {
            let base = random_ident(&mut rng, 50);
            near.push(("search".to_string(), base.clone()));
            near.push(("search".to_string(), perturb(&mut rng, &base, 11)));
        }
        // interleave: background calls, planted members and near-miss pair
        let mut sequence: Vec<(String, String, u8)> = Vec::new();
        sequence.extend(calls.drain(..).map(|(t, a)| (t, a, 0)));
        for (k, (t, a)) in planted_args.into_iter().enumerate() {
            let at = (k * 3 + 1).min(sequence.len());
            sequence.insert(at, (t, a, 1));
        }
        for (k, (t, a)) in near.into_iter().enumerate() {
            let at = (k * 4 + 2).min(sequence.len());
            sequence.insert(at, (t, a, 2));
        }
        let mut cluster = Vec::new();
        let mut pair = Vec::new();
        for (n, (tool, args, tag)) in sequence.into_iter().enumerate() {
            if n % 2 == 0 {
                s.llm(random_tokens(&mut rng), "working");
                id();
            }
            s.tool(&tool, &args, "ok", Status::Ok);
            let span = id();
            match tag {
                1 => cluster.push(span),
                2 => pair.push(span),
                _ => {}
            }
        }
        s.llm(random_tokens(&mut rng), "done");
        if !cluster.is_empty() {
            planted.push(cluster);
        }
        if let [a, b] = pair.as_slice() {
            near_misses.push((a.clone(), b.clone()));
        }
        out.push(AuditSession {
            log: s.end(Some(Outcome::Success)),
            planted,
            near_misses,
        });
    }
    out
}

/// A parent session that delegates to one child session.
pub fn parent_child_sessions(parent: &str, child: &str) -> (SessionLog, SessionLog) {
    let mut p = SessionScript::new(parent, Some(DEFAULT_MODEL), 1_700_000_000_000);
    p.llm(TokenUsage::new(1000, 200, 0, 0), "Delegating the lookup.")
        .spawn(child, "find the quarterly totals")
        .llm(TokenUsage::new(800, 150, 400, 0), "The quarterly totals are 4200 north and 3100 south.");
    let mut c = SessionScript::new(child, Some(DEFAULT_MODEL), 1_700_000_000_150);
    c.llm(TokenUsage::new(600, 100, 0, 0), "Searching.")
        .tool("search", "'quarterly totals'", "north 4200, south 3100", Status::Ok)
        .llm(TokenUsage::new(500, 80, 0, 0), "Quarterly totals: north 4200, south 3100.");
    (p.end(Some(Outcome::Success)), c.end(Some(Outcome::Success)))
}

/// A corpus of `sessions` sessions for end-to-end runs, mixing outcomes,
/// redundant reads, failures and one sub-agent delegation. Returns all
/// events (in seq order per session) together with each parent session's
/// outcome.
pub fn corpus(seed: u64, sessions: usize) -> (Vec<TraceEvent>, Vec<(String, Outcome)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    let mut outcomes = Vec::new();
    for i in 0..sessions {
        let key = format!("task-{:03}", 100 + i);
        let outcome = match i % 3 {
            0 | 1 => Outcome::Success,
            _ if i % 2 == 0 => Outcome::Partial,
            _ => Outcome::Fail,
        };
        let mut s = SessionScript::new(&key, Some(DEFAULT_MODEL), 1_700_000_000_000 + i as i64 * 60_000);
        s.llm(random_tokens(&mut rng), "Plan: inspect inputs, compute, write output.");
        s.tool("read_file", "'data/input.xlsx'", "Sheet1: 80 rows", Status::Ok);
        s.llm(random_tokens(&mut rng), "Compute the summary.");
        if outcome != Outcome::Success {
            s.tool("write_cells", "'output.xlsx', 'B2:B81'", "Error: formula not evaluated", Status::Error);
            s.llm(random_tokens(&mut rng), "Retrying the write.");
        }
        s.tool("write_cells", "'output.xlsx', 'B2:B81'", "wrote 80 cells", Status::Ok);
        if i % 2 == 0 {
            s.llm(random_tokens(&mut rng), "Verify the input again.");
            s.tool("read_file", "'data/Input.xlsx'", "Sheet1: 80 rows", Status::Ok);
        }
        if i % 4 == 1 {
            s.llm(random_tokens(&mut rng), "Check workspace notes.");
            s.tool("read_file", "'MEMORY.md'", "notes", Status::Ok);
        }
        let child = format!("{key}-sub");
        let delegate = i % 5 == 3;
        if delegate {
            s.llm(random_tokens(&mut rng), "Delegate verification.");
            s.spawn(&child, "verify the totals");
        }
        s.llm(random_tokens(&mut rng), "Summary written to output.xlsx column B.");
        events.extend(s.end(Some(outcome)).events);
        if delegate {
            let mut c = SessionScript::new(&child, Some(DEFAULT_MODEL), 1_700_000_000_500 + i as i64 * 60_000);
            c.llm(random_tokens(&mut rng), "Verifying.");
            c.tool("read_file", "'output.xlsx'", "column B: 80 values", Status::Ok);
            c.llm(random_tokens(&mut rng), "Totals in column B verified.");
            events.extend(c.end(Some(Outcome::Success)).events);
        }
        outcomes.push((key, outcome));
    }
    (events, outcomes)
}

/// Outcome records for a [`corpus`] run. Partial and failed tasks carry
/// one recorded mismatch so the error analyst has something to inspect.
pub fn task_records(outcomes: &[(String, Outcome)]) -> Vec<TaskRecord> {
    outcomes
        .iter()
        .map(|(key, outcome)| TaskRecord {
            session_id: key.clone(),
            outcome: *outcome,
            mismatches: if *outcome == Outcome::Success {
                Vec::new()
            } else {
                vec![Mismatch {
                    item: "B7".into(),
                    expected: "1520".into(),
                    actual: Some("=SUM(B2:B6)".into()),
                }]
            },
            gold: BTreeMap::new(),
        })
        .collect()
}

/// Made-up per-task quality and cost for every condition, for exercising
/// the evaluation path end to end. The baseline quality follows the
/// recorded outcome; each skill condition moves it up or down at random.
pub fn synthetic_results(seed: u64, outcomes: &[(String, Outcome)]) -> Vec<TaskOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (key, outcome) in outcomes {
        let base_q = match outcome {
            Outcome::Success => 1000u32,
            Outcome::Partial => rng.gen_range(250..=750),
            Outcome::Fail => 0,
        };
        let base_cost: i128 = rng.gen_range(30_000..90_000) * 1_000_000;
        for cond in Condition::ALL {
            let (q, cost) = if cond == Condition::Baseline {
                (base_q, base_cost)
            } else {
                let q = match rng.gen_range(0..10) {
                    0 => base_q.saturating_sub(333),
                    1 => 1000,
                    _ => base_q,
                };
                (q, base_cost * rng.gen_range(70..120) / 100)
            };
            out.push(TaskOutcome {
                task_id: key.clone(),
                condition: cond,
                quality: Quality::parse(&format!("{}.{:03}", q / 1000, q % 1000)).expect("quality in range"),
                cost: Usd::from_picos(cost),
                card_ref: Some(key.clone()),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::span::build_tree;

    #[test]
    fn reference_session_shape() {
        let tree = build_tree(&reference_session()).unwrap();
        let read_files: Vec<&str> = tree
            .tool_spans()
            .into_iter()
            .filter(|s| s.tool.as_ref().unwrap().tool_name == "read_file")
            .map(|s| s.span_id.as_str())
            .collect();
        assert_eq!(read_files, vec!["span-3", "span-7"]);
        let total: TokenUsage = tree.llm_spans().iter().filter_map(|s| s.tokens).sum();
        assert_eq!(total, TokenUsage::new(12840, 3210, 8450, 1200));
    }

    #[test]
    fn large_session_has_requested_span_count() {
        let tree = build_tree(&large_session(0, "big", 200)).unwrap();
        assert_eq!(tree.spans().len(), 200);
    }

    #[test]
    fn perturbation_distance_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = random_ident(&mut rng, 50);
        let moved = perturb(&mut rng, &base, 11);
        assert_eq!(crate::similarity::levenshtein(&base, &moved), 11);
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(random_session(7, "r", 5), random_session(7, "r", 5));
        assert_eq!(corpus(3, 6), corpus(3, 6));
    }
}
