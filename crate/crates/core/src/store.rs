//! Append-only, hash-chained session logs and a content-addressed blob
//! store.
//!
//! Each log line is one JSON [`LogEntry`]. An entry's hash is the SHA-256 of
//! its canonical JSON without the `hash` field; `prev_hash` links it to the
//! entry before. A final line without its newline is treated as a torn
//! write and dropped.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::BlobRef;
use crate::session::{ApplyError, Record, SessionState};

pub const GENESIS: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage I/O: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt log at line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error("session {0} already exists")]
    Exists(String),
    #[error("session {0} not found")]
    NotFound(String),
    #[error("invalid session id {0:?}")]
    BadId(String),
    #[error("log replay: {0}")]
    Apply(#[from] ApplyError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    /// Turn transaction the record belongs to; standalone records have none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub txn: Option<u64>,
    pub at: DateTime<Utc>,
    pub prev_hash: String,
    pub record: Record,
    pub hash: String,
}

/// A record waiting to be appended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pending {
    pub txn: Option<u64>,
    pub at: DateTime<Utc>,
    pub record: Record,
}

fn entry_hash(body: &Value) -> String {
    hex::encode(Sha256::digest(body.to_string().as_bytes()))
}

fn body_of(v: &Value) -> Value {
    let mut body = v.clone();
    if let Value::Object(m) = &mut body {
        m.remove("hash");
    }
    body
}

pub fn valid_session_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

/// Appends to one session log.
#[derive(Debug)]
pub struct LogWriter {
    file: File,
    len: u64,
    next_seq: u64,
    last_hash: String,
    next_txn: u64,
}

impl LogWriter {
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Reserves a transaction id.
    pub fn begin_txn(&mut self) -> u64 {
        let t = self.next_txn;
        self.next_txn += 1;
        t
    }

    /// Seals `pending` into chained entries and writes them with a single
    /// write. On failure the file is cut back to its previous length and
    /// the writer is unchanged.
    pub fn append(&mut self, pending: Vec<Pending>) -> Result<Vec<LogEntry>, StoreError> {
        let mut entries = Vec::with_capacity(pending.len());
        let mut buf = Vec::new();
        let mut prev = self.last_hash.clone();
        for (i, p) in pending.into_iter().enumerate() {
            let mut entry = LogEntry {
                seq: self.next_seq + i as u64,
                txn: p.txn,
                at: p.at,
                prev_hash: prev,
                record: p.record,
                hash: String::new(),
            };
            let v = serde_json::to_value(&entry).map_err(io::Error::other)?;
            entry.hash = entry_hash(&body_of(&v));
            let mut line = serde_json::to_vec(&entry).map_err(io::Error::other)?;
            line.push(b'\n');
            buf.extend_from_slice(&line);
            prev = entry.hash.clone();
            entries.push(entry);
        }
        let written = self.file.write_all(&buf).and_then(|_| self.file.sync_data());
        if let Err(e) = written {
            let _ = self.file.set_len(self.len);
            return Err(e.into());
        }
        self.len += buf.len() as u64;
        self.next_seq += entries.len() as u64;
        self.last_hash = prev;
        if let Some(max) = entries.iter().filter_map(|e| e.txn).max() {
            self.next_txn = self.next_txn.max(max + 1);
        }
        Ok(entries)
    }
}

/// A verified log and the state it replays to.
#[derive(Debug)]
pub struct Replayed {
    pub state: SessionState,
    pub entries: Vec<LogEntry>,
    valid_len: u64,
}

/// Parses and verifies a log, then folds committed records into state.
///
/// Records of a transaction apply only once its `turn_committed` record is
/// seen; aborted or unfinished transactions leave no trace in the state.
pub fn replay_bytes(bytes: &[u8]) -> Result<Replayed, StoreError> {
    let mut entries = Vec::new();
    let mut prev = GENESIS.to_string();
    let mut offset = 0usize;
    let mut valid_len = 0u64;
    for (line_no, chunk) in bytes.split_inclusive(|b| *b == b'\n').enumerate() {
        offset += chunk.len();
        let Some(line) = chunk.strip_suffix(b"\n") else {
            tracing::warn!(line = line_no + 1, "ignoring torn final log line");
            break;
        };
        let corrupt = |reason: String| StoreError::CorruptLog {
            line: line_no + 1,
            reason,
        };
        let v: Value = serde_json::from_slice(line).map_err(|e| corrupt(e.to_string()))?;
        let entry: LogEntry = serde_json::from_value(v.clone()).map_err(|e| corrupt(e.to_string()))?;
        if entry.seq != entries.len() as u64 {
            return Err(corrupt(format!("expected seq {}, found {}", entries.len(), entry.seq)));
        }
        if entry.prev_hash != prev {
            return Err(corrupt("previous-hash link broken".into()));
        }
        if entry_hash(&body_of(&v)) != entry.hash {
            return Err(corrupt("hash mismatch".into()));
        }
        prev = entry.hash.clone();
        valid_len = offset as u64;
        entries.push(entry);
    }
    let first = entries.first().ok_or(StoreError::CorruptLog {
        line: 1,
        reason: "log is empty".into(),
    })?;
    let mut state = SessionState::from_created(&first.record)?;
    let mut open: Option<(u64, Vec<&Record>)> = None;
    for e in &entries[1..] {
        match e.txn {
            None => state.apply(&e.record)?,
            Some(t) => {
                if open.as_ref().is_some_and(|(o, _)| *o != t) {
                    open = None;
                }
                match &e.record {
                    Record::TurnCommitted { .. } => {
                        for r in open.take().map(|(_, v)| v).unwrap_or_default() {
                            state.apply(r)?;
                        }
                    }
                    Record::TurnAborted { .. } => open = None,
                    r => open.get_or_insert_with(|| (t, Vec::new())).1.push(r),
                }
            }
        }
    }
    Ok(Replayed {
        state,
        entries,
        valid_len,
    })
}

/// Session logs and blobs under one data directory.
#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
}

impl SessionStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join("blobs"))?;
        Ok(SessionStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn log_path(&self, session_id: &str) -> Result<PathBuf, StoreError> {
        if !valid_session_id(session_id) {
            return Err(StoreError::BadId(session_id.to_string()));
        }
        Ok(self.root.join(format!("{session_id}.log")))
    }

    pub fn exists(&self, session_id: &str) -> bool {
        self.log_path(session_id).is_ok_and(|p| p.exists())
    }

    /// Creates an empty log; fails if the session exists.
    pub fn create(&self, session_id: &str) -> Result<LogWriter, StoreError> {
        let path = self.log_path(session_id)?;
        let file = OpenOptions::new()
            .append(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                io::ErrorKind::AlreadyExists => StoreError::Exists(session_id.to_string()),
                _ => e.into(),
            })?;
        Ok(LogWriter {
            file,
            len: 0,
            next_seq: 0,
            last_hash: GENESIS.to_string(),
            next_txn: 0,
        })
    }

    pub fn replay(&self, session_id: &str) -> Result<Replayed, StoreError> {
        let path = self.log_path(session_id)?;
        let bytes = fs::read(&path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => StoreError::NotFound(session_id.to_string()),
            _ => e.into(),
        })?;
        replay_bytes(&bytes)
    }

    /// Replays a log and opens it for appending, dropping any torn tail.
    pub fn reopen(&self, session_id: &str) -> Result<(Replayed, LogWriter), StoreError> {
        let replayed = self.replay(session_id)?;
        let path = self.log_path(session_id)?;
        let file = OpenOptions::new().append(true).open(&path)?;
        file.set_len(replayed.valid_len)?;
        let last = replayed.entries.last().expect("non-empty log");
        let writer = LogWriter {
            file,
            len: replayed.valid_len,
            next_seq: last.seq + 1,
            last_hash: last.hash.clone(),
            next_txn: replayed.entries.iter().filter_map(|e| e.txn).max().map_or(0, |t| t + 1),
        };
        Ok((replayed, writer))
    }

    /// Ids of every session with a log, sorted.
    pub fn session_ids(&self) -> Result<Vec<String>, StoreError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let p = entry?.path();
            if p.extension().is_some_and(|e| e == "log") {
                if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                    if valid_session_id(stem) {
                        ids.push(stem.to_string());
                    }
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    fn blob_path(&self, blob: &BlobRef) -> Option<PathBuf> {
        let ok = blob.0.len() == 64 && blob.0.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        ok.then(|| self.root.join("blobs").join(&blob.0))
    }

    /// Stores bytes under their SHA-256.
    pub fn put_blob(&self, bytes: &[u8]) -> Result<BlobRef, StoreError> {
        let blob = BlobRef(hex::encode(Sha256::digest(bytes)));
        let path = self.blob_path(&blob).expect("sha256 hex is a valid ref");
        if !path.exists() {
            let tmp = path.with_extension("tmp");
            fs::write(&tmp, bytes)?;
            fs::rename(&tmp, &path)?;
        }
        Ok(blob)
    }

    pub fn get_blob(&self, blob: &BlobRef) -> Result<Option<Vec<u8>>, StoreError> {
        let Some(path) = self.blob_path(blob) else {
            return Ok(None);
        };
        match fs::read(path) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::tests::created;
    use crate::session::{EndReason, PipelineStep};
    use chrono::TimeZone;

    fn at(s: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(s, 0).unwrap()
    }

    fn creation(state: &SessionState) -> Record {
        Record::SessionCreated {
            session_id: state.session_id.clone(),
            case: state.case.clone(),
            options: state.options,
            affect: state.affect,
            partition: state.partition.clone(),
            template_id: state.template_id.clone(),
            stopwords_hash: state.stopwords_hash.clone(),
            created_at: state.created_at,
        }
    }

    fn standalone(record: Record) -> Pending {
        Pending {
            txn: None,
            at: at(1),
            record,
        }
    }

    fn setup() -> (tempfile::TempDir, SessionStore, SessionState) {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::open(dir.path()).unwrap();
        let s = created(12);
        let mut w = store.create("s").unwrap();
        w.append(vec![standalone(creation(&s))]).unwrap();
        (dir, store, s)
    }

    #[test]
    fn round_trip_and_duplicate_create() {
        let (_d, store, s) = setup();
        assert_eq!(store.replay("s").unwrap().state, s);
        assert!(matches!(store.create("s"), Err(StoreError::Exists(_))));
        assert!(matches!(store.replay("nope"), Err(StoreError::NotFound(_))));
        assert!(matches!(store.log_path("../x"), Err(StoreError::BadId(_))));
        assert_eq!(store.session_ids().unwrap(), ["s"]);
    }

    #[test]
    fn aborted_and_open_transactions_do_not_apply() {
        let (_d, store, s) = setup();
        let (_, mut w) = store.reopen("s").unwrap();
        let t = w.begin_txn();
        let ended = Record::SessionEnded {
            reason: EndReason::ClinicianEnded,
            report: None,
        };
        w.append(vec![
            Pending { txn: Some(t), at: at(2), record: ended.clone() },
            Pending {
                txn: Some(t),
                at: at(2),
                record: Record::TurnAborted { step: PipelineStep::Digest, error: "x".into() },
            },
        ])
        .unwrap();
        let t2 = w.begin_txn();
        w.append(vec![Pending { txn: Some(t2), at: at(3), record: ended.clone() }]).unwrap();
        assert_eq!(store.replay("s").unwrap().state, s);
        let t3 = w.begin_txn();
        w.append(vec![
            Pending { txn: Some(t3), at: at(4), record: ended },
            Pending { txn: Some(t3), at: at(4), record: Record::TurnCommitted { ended: true } },
        ])
        .unwrap();
        assert_eq!(store.replay("s").unwrap().state.phase, crate::session::Phase::Ended);
    }

    #[test]
    fn torn_tail_is_dropped_and_overwritten() {
        let (_d, store, s) = setup();
        let path = store.log_path("s").unwrap();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"seq\":1,\"trunc").unwrap();
        assert_eq!(store.replay("s").unwrap().state, s);
        let (_, mut w) = store.reopen("s").unwrap();
        w.append(vec![standalone(Record::SessionEnded {
            reason: EndReason::ClinicianEnded,
            report: None,
        })])
        .unwrap();
        let r = store.replay("s").unwrap();
        assert_eq!(r.entries.len(), 2);
        assert_eq!(r.state.end_reason, Some(EndReason::ClinicianEnded));
    }

    #[test]
    fn edited_record_breaks_the_chain() {
        let (_d, store, _s) = setup();
        let (_, mut w) = store.reopen("s").unwrap();
        w.append(vec![standalone(Record::SessionEnded {
            reason: EndReason::ClinicianEnded,
            report: None,
        })])
        .unwrap();
        let path = store.log_path("s").unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let edited = text.replacen("insulin", "insuline", 1);
        assert_ne!(text, edited);
        fs::write(&path, edited).unwrap();
        assert!(matches!(store.replay("s"), Err(StoreError::CorruptLog { line: 1, .. })));
    }

    #[test]
    fn blobs_are_content_addressed() {
        let (_d, store, _s) = setup();
        let r = store.put_blob(b"abc").unwrap();
        assert_eq!(r, store.put_blob(b"abc").unwrap());
        assert_eq!(store.get_blob(&r).unwrap().unwrap(), b"abc");
        assert_eq!(store.get_blob(&BlobRef("../../etc/passwd".into())).unwrap(), None);
    }
}
