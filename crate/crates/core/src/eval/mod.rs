//! Fitness of a prompt on a fixed set of samples.

mod labels;
pub mod meteor;

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{digest_json, sha256_hex};
use crate::gateway::{ChatMessage, CompletionRequest, Gateway, GatewayError, Purpose};
use crate::parallel::parallel_map;
use crate::types::{LabelSpec, MetricKind, TaskSpec};

pub use labels::{extract_label, macro_f1, Prediction};
pub use meteor::{meteor_sentence, MeteorParams};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{predictions} predictions for {golds} gold labels")]
    LengthMismatch { predictions: usize, golds: usize },
    #[error("label {0:?} is not in the label set")]
    UnknownLabel(String),
    #[error("no samples to evaluate")]
    NoSamples,
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl EvalError {
    pub fn is_budget(&self) -> bool {
        matches!(self, EvalError::Gateway(e) if e.is_budget())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSample {
    pub input: String,
    pub target: String,
}

impl EvalSample {
    pub fn new(input: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            input: input.into(),
            target: target.into(),
        }
    }
}

/// Audit entry for one sample of one evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_index: usize,
    pub raw_output: String,
    /// Extracted label for classification; absent for generation or when unmatched.
    pub extracted: Option<String>,
    pub per_sample_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitnessScore {
    pub value: f64,
    pub n_samples: usize,
    pub metric: MetricKind,
    /// Empty when the score came from the cache.
    #[serde(default)]
    pub records: Vec<SampleRecord>,
}

/// Builds the task-model request: the candidate prompt as the system message
/// and the sample input as the user message.
pub fn render_task_input(
    prompt: &str,
    sample: &EvalSample,
    labels: Option<&[LabelSpec]>,
    temperature: f64,
    max_tokens: u32,
) -> Result<CompletionRequest, EvalError> {
    if prompt.trim().is_empty() {
        return Err(EvalError::Validation("prompt is empty".into()));
    }
    let mut user = sample.input.clone();
    if let Some(labels) = labels.filter(|l| !l.is_empty()) {
        let names: Vec<&str> = labels.iter().map(|l| l.name.as_str()).collect();
        user.push_str("\n\nAnswer with exactly one of these labels: ");
        user.push_str(&names.join(", "));
        user.push('.');
    }
    Ok(CompletionRequest {
        messages: vec![ChatMessage::system(prompt), ChatMessage::user(user)],
        temperature,
        max_tokens,
        purpose: Purpose::TaskInference,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub temperature: f64,
    pub max_tokens: u32,
    pub parallelism: usize,
    pub meteor: MeteorParams,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 256,
            parallelism: 1,
            meteor: MeteorParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CachedFitness {
    pub value: f64,
    pub n_samples: usize,
    pub metric: MetricKind,
}

/// Scores keyed by `(prompt digest, sample-set digest)`. Last writer wins.
#[derive(Debug, Default)]
pub struct FitnessCache {
    entries: Mutex<BTreeMap<String, CachedFitness>>,
}

impl FitnessCache {
    pub fn from_snapshot(entries: BTreeMap<String, CachedFitness>) -> Self {
        Self {
            entries: Mutex::new(entries),
        }
    }

    pub fn snapshot(&self) -> BTreeMap<String, CachedFitness> {
        self.entries.lock().expect("cache lock").clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, key: &str) -> Option<CachedFitness> {
        self.entries.lock().expect("cache lock").get(key).cloned()
    }

    fn put(&self, key: String, value: CachedFitness) {
        self.entries.lock().expect("cache lock").insert(key, value);
    }
}

#[derive(Serialize)]
struct AuditLine<'a> {
    prompt_digest: &'a str,
    sample_index: usize,
    raw_output: &'a str,
    extracted: Option<&'a str>,
    per_sample_score: f64,
}

/// JSONL sink for per-sample records.
pub struct AuditSink {
    file: Mutex<File>,
}

impl AuditSink {
    pub fn open(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Mutex::new(file),
        })
    }

    fn write(&self, prompt_digest: &str, records: &[SampleRecord]) {
        let mut buf = String::new();
        for r in records {
            let line = AuditLine {
                prompt_digest,
                sample_index: r.sample_index,
                raw_output: &r.raw_output,
                extracted: r.extracted.as_deref(),
                per_sample_score: r.per_sample_score,
            };
            buf.push_str(&serde_json::to_string(&line).expect("audit line serializes"));
            buf.push('\n');
        }
        if let Err(err) = self.file.lock().expect("audit lock").write_all(buf.as_bytes()) {
            tracing::warn!("audit write failed: {err}");
        }
    }
}

/// Scores prompts for one task on one fixed sample set.
pub struct Evaluator<'a> {
    task: &'a TaskSpec,
    samples: &'a [EvalSample],
    sample_digest: String,
    settings: EvalSettings,
    audit: Option<&'a AuditSink>,
}

impl<'a> Evaluator<'a> {
    pub fn new(task: &'a TaskSpec, samples: &'a [EvalSample], settings: EvalSettings) -> Result<Self, EvalError> {
        if samples.is_empty() {
            return Err(EvalError::NoSamples);
        }
        task.validate()
            .map_err(|e| EvalError::Validation(e.to_string()))?;
        settings.meteor.validate()?;
        if task.metric == MetricKind::MacroF1 {
            let names = task.label_names();
            if let Some(s) = samples.iter().find(|s| !names.contains(&s.target.as_str())) {
                return Err(EvalError::UnknownLabel(s.target.clone()));
            }
        }
        Ok(Self {
            task,
            samples,
            sample_digest: digest_json(&samples),
            settings,
            audit: None,
        })
    }

    pub fn with_audit(mut self, audit: &'a AuditSink) -> Self {
        self.audit = Some(audit);
        self
    }

    pub fn sample_digest(&self) -> &str {
        &self.sample_digest
    }

    pub fn cache_key(&self, prompt: &str) -> String {
        format!("{}:{}", sha256_hex(prompt.as_bytes()), self.sample_digest)
    }

    /// Runs every sample through the task model and aggregates the metric.
    /// A cache hit costs no LLM calls.
    pub fn evaluate(&self, prompt: &str, gateway: &Gateway, cache: &FitnessCache) -> Result<FitnessScore, EvalError> {
        let key = self.cache_key(prompt);
        if let Some(hit) = cache.get(&key) {
            return Ok(FitnessScore {
                value: hit.value,
                n_samples: hit.n_samples,
                metric: hit.metric,
                records: Vec::new(),
            });
        }
        let labels = match self.task.metric {
            MetricKind::MacroF1 => Some(self.task.labels.as_slice()),
            MetricKind::Meteor => None,
        };
        let requests = self
            .samples
            .iter()
            .map(|s| {
                render_task_input(prompt, s, labels, self.settings.temperature, self.settings.max_tokens)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let outputs = parallel_map(&requests, self.settings.parallelism, |_, req| {
            match gateway.complete(req) {
                Ok(resp) => Ok(resp.text),
                // an empty answer is just a wrong answer
                Err(GatewayError::MalformedOutput { .. }) => Ok(String::new()),
                Err(e) => Err(e),
            }
        });
        let outputs = outputs.into_iter().collect::<Result<Vec<_>, _>>()?;

        let (value, records) = match self.task.metric {
            MetricKind::MacroF1 => {
                let predictions: Vec<Prediction> =
                    outputs.iter().map(|o| extract_label(o, &self.task.labels)).collect();
                let golds: Vec<String> = self.samples.iter().map(|s| s.target.clone()).collect();
                let value = macro_f1(&predictions, &golds, &self.task.label_names())?;
                let records = outputs
                    .into_iter()
                    .zip(predictions)
                    .zip(&golds)
                    .enumerate()
                    .map(|(i, ((raw, pred), gold))| SampleRecord {
                        sample_index: i,
                        per_sample_score: if pred.label() == Some(gold.as_str()) { 1.0 } else { 0.0 },
                        extracted: pred.label().map(str::to_string),
                        raw_output: raw,
                    })
                    .collect::<Vec<_>>();
                (value, records)
            }
            MetricKind::Meteor => {
                let records: Vec<SampleRecord> = outputs
                    .into_iter()
                    .zip(self.samples)
                    .enumerate()
                    .map(|(i, (raw, s))| SampleRecord {
                        sample_index: i,
                        per_sample_score: meteor_sentence(&raw, &s.target, &self.settings.meteor),
                        extracted: None,
                        raw_output: raw,
                    })
                    .collect();
                let mean = records.iter().map(|r| r.per_sample_score).sum::<f64>() / records.len() as f64;
                (mean, records)
            }
        };
        let value = value.clamp(0.0, 1.0);
        if let Some(audit) = self.audit {
            audit.write(&sha256_hex(prompt.as_bytes()), &records);
        }
        cache.put(
            key,
            CachedFitness {
                value,
                n_samples: records.len(),
                metric: self.task.metric,
            },
        );
        Ok(FitnessScore {
            value,
            n_samples: records.len(),
            metric: self.task.metric,
            records,
        })
    }
}

/// One-off, uncached evaluation.
pub fn evaluate_prompt(
    prompt: &str,
    task: &TaskSpec,
    samples: &[EvalSample],
    gateway: &Gateway,
    settings: EvalSettings,
) -> Result<FitnessScore, EvalError> {
    Evaluator::new(task, samples, settings)?.evaluate(prompt, gateway, &FitnessCache::default())
}
