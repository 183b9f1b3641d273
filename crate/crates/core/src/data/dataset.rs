use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::index;
use serde::Deserialize;
use thiserror::Error;

use crate::eval::EvalSample;
use crate::rng::subsample_rng;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read dataset {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("dataset has no samples")]
    Empty,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Row {
    input: String,
    target: String,
    #[serde(default)]
    id: Option<serde_json::Value>,
}

/// Parses JSONL text. Blank lines are skipped; `\r\n` is accepted.
pub fn parse_dataset(text: &str) -> Result<Vec<EvalSample>, DatasetError> {
    let mut samples = Vec::new();
    let mut ids = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.trim().is_empty() {
            continue;
        }
        let err = |message: String| DatasetError::Line { line, message };
        let row: Row = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        if row.input.trim().is_empty() {
            return Err(err("empty \"input\"".into()));
        }
        if row.target.trim().is_empty() {
            return Err(err("empty \"target\"".into()));
        }
        if let Some(id) = row.id {
            if !ids.insert(id.to_string()) {
                return Err(err(format!("duplicate id {id}")));
            }
        }
        samples.push(EvalSample::new(row.input, row.target));
    }
    if samples.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(samples)
}

pub fn load_dataset(path: &Path) -> Result<Vec<EvalSample>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(&text)
}

/// Uniform sample without replacement, fixed by `seed`. The chosen samples
/// keep their file order. Oversized requests are clamped.
pub fn subsample(samples: &[EvalSample], size: usize, seed: u64) -> Vec<EvalSample> {
    if size >= samples.len() {
        if size > samples.len() {
            tracing::warn!(requested = size, available = samples.len(), "subsample clamped to dataset size");
        }
        return samples.to_vec();
    }
    let mut picked = index::sample(&mut subsample_rng(seed), samples.len(), size).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| samples[i].clone()).collect()
}
