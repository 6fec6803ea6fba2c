//! HTTP front end for the store.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::{json, Value};
use tracecard::event::validate_event;

use crate::store::{Store, StoreError};

/// Largest accepted request body.
pub const MAX_BODY_BYTES: usize = 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejected {
    pub index: usize,
    /// Offending field, `$` for the whole document.
    pub field: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReceipt {
    pub accepted: usize,
    pub duplicates: usize,
    pub rejected: Vec<Rejected>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BodyError {
    #[error("malformed body at line {line}, column {column}: {message}")]
    Malformed {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("batch is empty")]
    Empty,
}

/// Splits a request body into raw documents: a JSON array, or one document
/// per non-blank line.
pub fn parse_body(body: &[u8]) -> Result<Vec<Value>, BodyError> {
    let malformed = |line: usize, e: serde_json::Error| BodyError::Malformed {
        line,
        column: e.column(),
        message: e.to_string(),
    };
    let first = body.iter().find(|b| !b.is_ascii_whitespace());
    let docs = match first {
        None => return Err(BodyError::Empty),
        Some(b'[') => match serde_json::from_slice::<Value>(body) {
            Ok(Value::Array(items)) => items,
            Ok(_) => unreachable!("a body starting with '[' parses to an array"),
            Err(e) => return Err(malformed(e.line(), e)),
        },
        Some(_) => {
            let mut docs = Vec::new();
            for (i, line) in body.split(|&b| b == b'\n').enumerate() {
                if line.iter().all(|b| b.is_ascii_whitespace()) {
                    continue;
                }
                docs.push(serde_json::from_slice(line).map_err(|e| malformed(i + 1, e))?);
            }
            docs
        }
    };
    if docs.is_empty() {
        return Err(BodyError::Empty);
    }
    Ok(docs)
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error(transparent)]
    Body(#[from] BodyError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Validates every document, stores the valid ones, and reports the rest
/// by position. Nothing is acknowledged unless the store write succeeded.
pub fn handle_ingest(store: &Store, body: &[u8]) -> Result<IngestReceipt, IngestError> {
    let docs = parse_body(body)?;
    let mut valid = Vec::with_capacity(docs.len());
    let mut rejected = Vec::new();
    for (index, doc) in docs.iter().enumerate() {
        match validate_event(doc) {
            Ok(e) => valid.push(e),
            Err(e) => rejected.push(Rejected {
                index,
                field: e.path,
                reason: e.reason,
            }),
        }
    }
    let outcome = store.append(&valid)?;
    Ok(IngestReceipt {
        accepted: outcome.accepted,
        duplicates: outcome.duplicates,
        rejected,
    })
}

fn error_response(status: StatusCode, message: String) -> Response {
    (status, Json(json!({ "error": message }))).into_response()
}

async fn ingest(State(store): State<Arc<Store>>, body: Bytes) -> Response {
    let result = tokio::task::spawn_blocking(move || handle_ingest(&store, &body)).await;
    match result {
        Ok(Ok(receipt)) => (StatusCode::OK, Json(receipt)).into_response(),
        Ok(Err(IngestError::Body(e))) => {
            let mut body = json!({ "error": e.to_string() });
            if let BodyError::Malformed { line, column, .. } = e {
                body["line"] = line.into();
                body["column"] = column.into();
            }
            (StatusCode::BAD_REQUEST, Json(body)).into_response()
        }
        Ok(Err(IngestError::Store(e))) => {
            tracing::error!("ingest failed: {e}");
            error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
        }
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn session(State(store): State<Arc<Store>>, Path(key): Path<String>) -> Response {
    let k = key.clone();
    match tokio::task::spawn_blocking(move || store.load(&k)).await {
        Ok(Ok(log)) => ([(header::CONTENT_TYPE, "application/json")], log.to_canonical_json()).into_response(),
        Ok(Err(StoreError::NotFound(_))) => error_response(StatusCode::NOT_FOUND, format!("session {key:?} not found")),
        Ok(Err(e)) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/v1/traces/events", post(ingest))
        .route("/v1/sessions/{key}", get(session))
        .route("/v1/healthz", get(healthz))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn array_and_line_bodies() {
        assert_eq!(parse_body(b"[{\"a\":1},{\"b\":2}]").unwrap().len(), 2);
        assert_eq!(parse_body(b"{\"a\":1}\n\n{\"b\":2}\n").unwrap().len(), 2);
        assert_eq!(parse_body(b"  "), Err(BodyError::Empty));
        assert_eq!(parse_body(b"[]"), Err(BodyError::Empty));
        match parse_body(b"{\"a\":1}\n{\"b\":}\n") {
            Err(BodyError::Malformed { line, column, .. }) => assert_eq!((line, column), (2, 6)),
            other => panic!("{other:?}"),
        }
        match parse_body(b"[{\"a\":1},\n {\"b\" 2}]") {
            Err(BodyError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
