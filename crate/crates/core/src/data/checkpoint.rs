use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::digest::digest_json;

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),
    #[error("unsupported checkpoint schema_version {found} (expected {SCHEMA_VERSION})")]
    Version { found: Value },
    #[error("checkpoint state does not match the expected shape: {0}")]
    Shape(String),
}

fn body(state: &Value) -> Value {
    json!({ "schema_version": SCHEMA_VERSION, "state": state })
}

/// Writes `{"schema_version", "state", "digest"}` where the digest covers the
/// canonical JSON of the first two fields. The file is replaced atomically.
pub fn save_checkpoint<T: Serialize>(state: &T, path: &Path) -> Result<(), CheckpointError> {
    let state = serde_json::to_value(state).map_err(|e| CheckpointError::Shape(e.to_string()))?;
    let digest = digest_json(&body(&state));
    let doc = json!({ "schema_version": SCHEMA_VERSION, "state": state, "digest": digest });
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_string_pretty(&doc).expect("value serializes")).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint<T: DeserializeOwned>(path: &Path) -> Result<T, CheckpointError> {
    let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| CheckpointError::Integrity(e.to_string()))?;
    let version = doc.get("schema_version").cloned().unwrap_or(Value::Null);
    if version.as_u64() != Some(SCHEMA_VERSION) {
        return Err(CheckpointError::Version { found: version });
    }
    let state = doc
        .get("state")
        .ok_or_else(|| CheckpointError::Integrity("missing state".into()))?;
    let stored = doc
        .get("digest")
        .and_then(Value::as_str)
        .ok_or_else(|| CheckpointError::Integrity("missing digest".into()))?;
    let actual = digest_json(&body(state));
    if stored != actual {
        return Err(CheckpointError::Integrity("digest mismatch".into()));
    }
    serde_json::from_value(state.clone()).map_err(|e| CheckpointError::Shape(e.to_string()))
}
