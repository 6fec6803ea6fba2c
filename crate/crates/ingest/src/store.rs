//! Append-only per-session event files.
//!
//! Each session lives in `sessions/<hex(session_key)>.jsonl`, one canonical
//! event document per line. A line is acknowledged only after it has been
//! written in full and the file synced. A crash mid-write can leave an
//! unterminated last line; readers ignore it and the next writer truncates
//! it away before appending.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use tracecard::event::{canonical_deserialize, canonical_serialize};
use tracecard::log::LogError;
use tracecard::{SessionLog, TraceEvent};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}, line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("session {0:?} not found")]
    NotFound(String),
    #[error(transparent)]
    Log(#[from] LogError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Counts from one append.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AppendOutcome {
    pub accepted: usize,
    pub duplicates: usize,
}

struct SessionFile {
    path: PathBuf,
    /// Seqs already on disk.
    seqs: BTreeSet<u64>,
    /// Length of the well-formed prefix.
    len: u64,
}

/// Parses the complete lines of a session file. Returns the events and the
/// byte length of the well-formed prefix; an unterminated or unparsable
/// last line is left out.
fn read_lines(path: &Path, bytes: &[u8]) -> Result<(Vec<TraceEvent>, u64), StoreError> {
    let mut events = Vec::new();
    let mut offset = 0usize;
    let mut line_no = 0;
    while offset < bytes.len() {
        line_no += 1;
        let Some(nl) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            // torn tail: never acknowledged
            break;
        };
        let line = &bytes[offset..offset + nl];
        match canonical_deserialize(line) {
            Ok(e) => events.push(e),
            Err(e) if offset + nl + 1 == bytes.len() => {
                // a complete but garbled last line is treated like a torn one
                let _ = e;
                break;
            }
            Err(e) => {
                return Err(StoreError::Corrupt {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: e.to_string(),
                })
            }
        }
        offset += nl + 1;
    }
    Ok((events, offset as u64))
}

fn session_file_name(key: &str) -> String {
    format!("{}.jsonl", hex::encode(key.as_bytes()))
}

pub struct Store {
    dir: PathBuf,
    sessions: Mutex<HashMap<String, Arc<Mutex<SessionFile>>>>,
}

impl Store {
    /// Opens (creating if needed) a store rooted at `dir` and checks that
    /// it is writable.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        let sessions_dir = dir.join("sessions");
        fs::create_dir_all(&sessions_dir).map_err(io_err(&sessions_dir))?;
        let probe = sessions_dir.join(".write-probe");
        File::create(&probe)
            .and_then(|f| f.sync_all())
            .map_err(io_err(&probe))?;
        fs::remove_file(&probe).map_err(io_err(&probe))?;
        Ok(Self {
            dir,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    /// Opens an existing store for reading without touching the disk.
    pub fn open_existing(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        let sessions_dir = dir.join("sessions");
        if !sessions_dir.is_dir() {
            return Err(io_err(&sessions_dir)(io::Error::new(
                io::ErrorKind::NotFound,
                "no session store here",
            )));
        }
        Ok(Self {
            dir,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn session_path(&self, key: &str) -> PathBuf {
        self.dir.join("sessions").join(session_file_name(key))
    }

    fn session(&self, key: &str) -> Result<Arc<Mutex<SessionFile>>, StoreError> {
        let mut sessions = self.sessions.lock().expect("session table lock");
        if let Some(s) = sessions.get(key) {
            return Ok(s.clone());
        }
        let path = self.session_path(key);
        let (seqs, len) = match fs::read(&path) {
            Ok(bytes) => {
                let (events, len) = read_lines(&path, &bytes)?;
                (events.iter().map(|e| e.seq).collect(), len)
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => (BTreeSet::new(), 0),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let file = Arc::new(Mutex::new(SessionFile { path, seqs, len }));
        sessions.insert(key.to_string(), file.clone());
        Ok(file)
    }

    /// Appends the events that are not already stored. Events of one session
    /// are written with a single write and synced before returning. Within
    /// the batch a repeated `(session_key, seq)` counts as a duplicate.
    pub fn append(&self, events: &[TraceEvent]) -> Result<AppendOutcome, StoreError> {
        let mut by_session: BTreeMap<&str, Vec<&TraceEvent>> = BTreeMap::new();
        for e in events {
            by_session.entry(&e.session_key).or_default().push(e);
        }
        let mut outcome = AppendOutcome::default();
        for (key, events) in by_session {
            let session = self.session(key)?;
            let mut file = session.lock().expect("session lock");
            let mut fresh = BTreeSet::new();
            let mut buf = Vec::new();
            for e in events {
                if file.seqs.contains(&e.seq) || !fresh.insert(e.seq) {
                    outcome.duplicates += 1;
                    continue;
                }
                buf.extend(canonical_serialize(e));
                buf.push(b'\n');
            }
            if buf.is_empty() {
                continue;
            }
            let new_file = file.len == 0 && !file.path.exists();
            write_synced(&file.path, file.len, &buf)?;
            if new_file {
                sync_dir(file.path.parent().expect("session files live in a directory"))?;
            }
            file.len += buf.len() as u64;
            outcome.accepted += fresh.len();
            file.seqs.extend(fresh);
        }
        Ok(outcome)
    }

    /// All persisted events of `key`, in seq order.
    pub fn load(&self, key: &str) -> Result<SessionLog, StoreError> {
        let path = self.session_path(key);
        let mut bytes = Vec::new();
        match File::open(&path) {
            Ok(mut f) => f.read_to_end(&mut bytes).map_err(io_err(&path))?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NotFound(key.to_string())),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let (events, _) = read_lines(&path, &bytes)?;
        if events.is_empty() {
            return Err(StoreError::NotFound(key.to_string()));
        }
        Ok(SessionLog::from_events(key, events)?)
    }

    /// Keys of every session with at least one stored event, sorted.
    pub fn session_keys(&self) -> Result<Vec<String>, StoreError> {
        let dir = self.dir.join("sessions");
        let mut keys = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            let name = entry.file_name();
            let Some(stem) = name.to_str().and_then(|n| n.strip_suffix(".jsonl")) else {
                continue;
            };
            let Some(key) = hex::decode(stem).ok().and_then(|b| String::from_utf8(b).ok()) else {
                continue;
            };
            match self.load(&key) {
                Ok(_) => keys.push(key),
                Err(StoreError::NotFound(_)) => {}
                Err(e) => return Err(e),
            }
        }
        keys.sort();
        Ok(keys)
    }
}

/// Writes `buf` at `offset` (dropping anything after it, such as a torn
/// line) and syncs. On failure the file is cut back to `offset`.
fn write_synced(path: &Path, offset: u64, buf: &[u8]) -> Result<(), StoreError> {
    let mut f = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(false)
        .open(path)
        .map_err(io_err(path))?;
    let result = (|| {
        f.set_len(offset)?;
        f.seek(SeekFrom::Start(offset))?;
        f.write_all(buf)?;
        f.sync_data()
    })();
    if let Err(e) = result {
        let _ = f.set_len(offset);
        return Err(io_err(path)(e));
    }
    Ok(())
}

#[cfg(unix)]
fn sync_dir(dir: &Path) -> Result<(), StoreError> {
    File::open(dir).and_then(|d| d.sync_all()).map_err(io_err(dir))
}

#[cfg(not(unix))]
fn sync_dir(_dir: &Path) -> Result<(), StoreError> {
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tracecard::Payload;

    fn ev(key: &str, seq: u64) -> TraceEvent {
        TraceEvent::new(key, seq, seq as i64, Payload::LlmInput { model: None })
    }

    #[test]
    fn file_names_round_trip_odd_keys() {
        let name = session_file_name("a/b c");
        assert!(!name.contains('/'));
        assert_eq!(hex::decode(name.strip_suffix(".jsonl").unwrap()).unwrap(), b"a/b c");
    }

    #[test]
    fn torn_tail_is_ignored_and_overwritten() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        store.append(&[ev("s", 0), ev("s", 1)]).unwrap();
        let path = store.session_path("s");
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"kind":"llm_in"#).unwrap();
        drop(f);

        let reopened = Store::open(dir.path()).unwrap();
        assert_eq!(reopened.load("s").unwrap().events.len(), 2);
        let out = reopened.append(&[ev("s", 1), ev("s", 2)]).unwrap();
        assert_eq!(out, AppendOutcome { accepted: 1, duplicates: 1 });
        assert_eq!(reopened.load("s").unwrap().events.len(), 3);
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn garbage_in_the_middle_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        store.append(&[ev("s", 0)]).unwrap();
        let path = store.session_path("s");
        let good = fs::read(&path).unwrap();
        let mut bytes = b"not json\n".to_vec();
        bytes.extend(good);
        fs::write(&path, bytes).unwrap();
        assert!(matches!(Store::open(dir.path()).unwrap().load("s"), Err(StoreError::Corrupt { line: 1, .. })));
    }

    #[test]
    fn unknown_session_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        assert!(matches!(store.load("nope"), Err(StoreError::NotFound(_))));
        assert!(store.session_keys().unwrap().is_empty());
    }
}
