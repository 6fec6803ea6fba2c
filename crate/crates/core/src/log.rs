//! Seq-ordered per-session event logs.

use std::collections::BTreeMap;

use serde_json::{Map, Value};

use crate::event::{validate_event, EventKind, TraceEvent, ValidationError};

/// All persisted events of one session, sorted by seq with no duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub session_key: String,
    pub events: Vec<TraceEvent>,
    /// The last event (by seq) is `session_end`.
    pub complete: bool,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LogError {
    #[error("event seq {seq} belongs to session {found}, not {expected}")]
    ForeignEvent {
        expected: String,
        found: String,
        seq: u64,
    },
    #[error("duplicate seq {0}")]
    DuplicateSeq(u64),
    #[error("session log is empty")]
    Empty,
    #[error("invalid session log document: {0}")]
    Document(String),
    #[error("event {index}: {source}")]
    Event {
        index: usize,
        #[source]
        source: ValidationError,
    },
}

impl SessionLog {
    /// Sorts `events` by seq. Fails on events from another session or on a
    /// repeated seq.
    pub fn from_events(
        session_key: impl Into<String>,
        events: impl IntoIterator<Item = TraceEvent>,
    ) -> Result<Self, LogError> {
        let session_key = session_key.into();
        let mut by_seq = BTreeMap::new();
        for e in events {
            if e.session_key != session_key {
                return Err(LogError::ForeignEvent {
                    expected: session_key,
                    found: e.session_key,
                    seq: e.seq,
                });
            }
            let seq = e.seq;
            if by_seq.insert(seq, e).is_some() {
                return Err(LogError::DuplicateSeq(seq));
            }
        }
        let events: Vec<TraceEvent> = by_seq.into_values().collect();
        let complete = events
            .last()
            .is_some_and(|e| e.kind() == EventKind::SessionEnd);
        Ok(Self {
            session_key,
            events,
            complete,
        })
    }

    /// Groups a mixed event stream into one log per session key.
    pub fn group(events: impl IntoIterator<Item = TraceEvent>) -> Result<Vec<SessionLog>, LogError> {
        let mut sessions: BTreeMap<String, Vec<TraceEvent>> = BTreeMap::new();
        for e in events {
            sessions.entry(e.session_key.clone()).or_default().push(e);
        }
        sessions
            .into_iter()
            .map(|(key, events)| SessionLog::from_events(key, events))
            .collect()
    }

    /// `{"complete": .., "events": [..], "session_key": ..}` with canonical
    /// event documents.
    pub fn to_document(&self) -> Value {
        let mut m = Map::new();
        m.insert("complete".into(), Value::Bool(self.complete));
        m.insert(
            "events".into(),
            Value::Array(self.events.iter().map(TraceEvent::to_document).collect()),
        );
        m.insert("session_key".into(), Value::from(self.session_key.clone()));
        Value::Object(m)
    }

    pub fn to_canonical_json(&self) -> Vec<u8> {
        serde_json::to_vec(&self.to_document()).expect("session log serializes")
    }

    pub fn from_document(doc: &Value) -> Result<Self, LogError> {
        let key = doc
            .get("session_key")
            .and_then(Value::as_str)
            .ok_or_else(|| LogError::Document("missing session_key".into()))?;
        let events = doc
            .get("events")
            .and_then(Value::as_array)
            .ok_or_else(|| LogError::Document("missing events array".into()))?;
        let events = events
            .iter()
            .enumerate()
            .map(|(index, e)| validate_event(e).map_err(|source| LogError::Event { index, source }))
            .collect::<Result<Vec<_>, _>>()?;
        SessionLog::from_events(key, events)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Payload;

    fn ev(key: &str, seq: u64, payload: Payload) -> TraceEvent {
        TraceEvent::new(key, seq, seq as i64 * 10, payload)
    }

    #[test]
    fn sorted_and_complete() {
        let log = SessionLog::from_events(
            "s",
            vec![
                ev("s", 2, Payload::SessionEnd { outcome: None }),
                ev("s", 0, Payload::SessionStart { model: None }),
                ev("s", 1, Payload::LlmInput { model: None }),
            ],
        )
        .unwrap();
        let seqs: Vec<u64> = log.events.iter().map(|e| e.seq).collect();
        assert_eq!(seqs, vec![0, 1, 2]);
        assert!(log.complete);
    }

    #[test]
    fn rejects_duplicates_and_foreign_events() {
        let dup = SessionLog::from_events(
            "s",
            vec![
                ev("s", 0, Payload::SessionStart { model: None }),
                ev("s", 0, Payload::SessionStart { model: None }),
            ],
        );
        assert_eq!(dup.unwrap_err(), LogError::DuplicateSeq(0));
        let foreign = SessionLog::from_events("s", vec![ev("t", 0, Payload::SessionStart { model: None })]);
        assert!(matches!(foreign, Err(LogError::ForeignEvent { .. })));
    }

    #[test]
    fn document_round_trip() {
        let log = SessionLog::from_events(
            "s",
            vec![
                ev("s", 0, Payload::SessionStart { model: Some("m".into()) }),
                ev("s", 1, Payload::LlmInput { model: None }),
            ],
        )
        .unwrap();
        assert!(!log.complete);
        let back = SessionLog::from_document(&log.to_document()).unwrap();
        assert_eq!(back, log);
    }
}
