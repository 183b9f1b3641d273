use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::Purpose;

/// One line of the call log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub purpose: Purpose,
    pub request_digest: String,
    /// Absent when the call failed.
    pub response_digest: Option<String>,
    pub latency_ms: u64,
    pub attempts: u32,
    pub epoch: u32,
}

/// Append-only JSONL sink for [`CallRecord`]s.
pub struct CallLog {
    file: Mutex<File>,
}

impl CallLog {
    pub fn open(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Mutex::new(file),
        })
    }

    pub fn append(&self, record: &CallRecord) {
        let mut line = serde_json::to_string(record).expect("call record serializes");
        line.push('\n');
        let mut file = self.file.lock().expect("call log lock");
        // A full line per write keeps concurrent appends from interleaving.
        if let Err(err) = file.write_all(line.as_bytes()) {
            tracing::warn!("call log write failed: {err}");
        }
    }
}
