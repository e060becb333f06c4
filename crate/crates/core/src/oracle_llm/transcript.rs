use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttemptOutcome {
    Response { text: String },
    Error { message: String },
}

/// One request attempt and whatever came back.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub attempt: u32,
    pub model_id: String,
    pub prompt_text: String,
    pub outcome: AttemptOutcome,
    pub latency_ms: u64,
    pub timestamp: DateTime<Utc>,
}

/// Append-only log of every attempt. Clones share the same log.
#[derive(Clone, Default)]
pub struct Transcript {
    inner: Arc<Mutex<TranscriptInner>>,
}

#[derive(Default)]
struct TranscriptInner {
    entries: Vec<TranscriptEntry>,
    sink: Option<File>,
}

impl Transcript {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Also mirrors entries to `path`, one JSON record per line.
    pub fn with_file(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { inner: Arc::new(Mutex::new(TranscriptInner { entries: Vec::new(), sink: Some(file) })) })
    }

    pub fn append(&self, entry: TranscriptEntry) {
        let mut inner = self.inner.lock().expect("transcript lock");
        if let Some(sink) = inner.sink.as_mut() {
            let line = serde_json::to_string(&entry).expect("transcript entry serializes");
            if let Err(e) = writeln!(sink, "{line}").and_then(|_| sink.flush()) {
                tracing::error!(error = %e, "failed to write transcript line");
            }
        }
        inner.entries.push(entry);
    }

    pub fn entries(&self) -> Vec<TranscriptEntry> {
        self.inner.lock().expect("transcript lock").entries.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("transcript lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Debug for Transcript {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transcript").field("len", &self.len()).finish()
    }
}
