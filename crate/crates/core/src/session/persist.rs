//! Session state file and event log.
//!
//! The state file is a JSON envelope `{schema_version, integrity, session}`
//! where `integrity` is the SHA-256 of the compact serialization of
//! `session`. Writes go through a temp file in the same directory followed
//! by a rename. The event log sits next to it as `<state>.events.jsonl`.

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::Session;
use crate::selection_parser::SelectionStatus;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed state file {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(
        "state file {path} has schema version {found}, this build reads version {expected}; no migration available"
    )]
    Migration { path: PathBuf, found: u64, expected: u32 },
    #[error("state file {path} failed its integrity check")]
    Integrity { path: PathBuf },
}

#[derive(Serialize)]
struct EnvelopeOut<'a> {
    schema_version: u32,
    integrity: String,
    session: &'a Session,
}

fn digest(session: &Session) -> String {
    let compact = serde_json::to_string(session).expect("session serializes");
    hex::encode(Sha256::digest(compact.as_bytes()).as_slice())
}

pub fn save_session(session: &Session, path: &Path) -> Result<(), PersistError> {
    let io_err = |source| PersistError::Io { path: path.to_owned(), source };
    let envelope = EnvelopeOut { schema_version: SCHEMA_VERSION, integrity: digest(session), session };
    let mut body = serde_json::to_vec_pretty(&envelope).expect("envelope serializes");
    body.push(b'\n');

    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(io_err)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(&body).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

pub fn load_session(path: &Path) -> Result<Session, PersistError> {
    let raw = fs::read_to_string(path).map_err(|source| PersistError::Io { path: path.to_owned(), source })?;
    let format = |message: String| PersistError::Format { path: path.to_owned(), message };
    let mut value: serde_json::Value = serde_json::from_str(&raw).map_err(|e| format(e.to_string()))?;
    let version = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| format("missing schema_version".into()))?;
    if version != u64::from(SCHEMA_VERSION) {
        return Err(PersistError::Migration { path: path.to_owned(), found: version, expected: SCHEMA_VERSION });
    }
    let integrity = value
        .get("integrity")
        .and_then(serde_json::Value::as_str)
        .ok_or_else(|| format("missing integrity".into()))?
        .to_string();
    let session_value =
        value.get_mut("session").map(serde_json::Value::take).ok_or_else(|| format("missing session".into()))?;
    let session: Session = serde_json::from_value(session_value).map_err(|e| format(e.to_string()))?;
    if digest(&session) != integrity {
        return Err(PersistError::Integrity { path: path.to_owned() });
    }
    Ok(session)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Created { session_id: String, strategy: String },
    BatchSelected { iteration: usize, indices: Vec<usize>, status: SelectionStatus, diagnostics: Vec<String> },
    LabelsSubmitted { iteration: usize, indices: Vec<usize> },
    IterationCommitted { iteration: usize, labeled_count: usize },
    Exhausted { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct EventLine {
    at: DateTime<Utc>,
    #[serde(flatten)]
    event: SessionEvent,
}

/// Append-only JSON-lines event log.
#[derive(Clone, Debug)]
pub struct EventLog {
    path: PathBuf,
}

impl EventLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, at: DateTime<Utc>, event: &SessionEvent) -> Result<(), PersistError> {
        let io_err = |source| PersistError::Io { path: self.path.clone(), source };
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path).map_err(io_err)?;
        let line = serde_json::to_string(&EventLine { at, event: event.clone() }).expect("event serializes");
        writeln!(file, "{line}").map_err(io_err)
    }

    pub fn read(&self) -> Result<Vec<(DateTime<Utc>, SessionEvent)>, PersistError> {
        let raw = match fs::read_to_string(&self.path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(source) => return Err(PersistError::Io { path: self.path.clone(), source }),
        };
        raw.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str::<EventLine>(l)
                    .map(|line| (line.at, line.event))
                    .map_err(|e| PersistError::Format { path: self.path.clone(), message: e.to_string() })
            })
            .collect()
    }
}

/// State file plus its event log.
#[derive(Clone, Debug)]
pub struct SessionStore {
    state_path: PathBuf,
    events: EventLog,
}

impl SessionStore {
    pub fn new(state_path: impl Into<PathBuf>) -> Self {
        let state_path = state_path.into();
        let mut events_name = state_path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        events_name.push(".events.jsonl");
        let events = EventLog::new(state_path.with_file_name(events_name));
        Self { state_path, events }
    }

    pub fn state_path(&self) -> &Path {
        &self.state_path
    }

    pub fn events(&self) -> &EventLog {
        &self.events
    }

    pub fn save(&self, session: &Session) -> Result<(), PersistError> {
        save_session(session, &self.state_path)
    }

    pub fn load(&self) -> Result<Session, PersistError> {
        load_session(&self.state_path)
    }

    pub fn record(&self, at: DateTime<Utc>, event: &SessionEvent) -> Result<(), PersistError> {
        self.events.append(at, event)
    }
}
