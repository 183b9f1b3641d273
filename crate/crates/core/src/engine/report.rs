use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::state::{EpochRecord, RunMode};
use crate::gateway::{BudgetLedger, Purpose};
use crate::types::MetricKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    BudgetExhausted,
    Failed,
}

impl RunStatus {
    /// Process exit code for this outcome.
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Completed => 0,
            RunStatus::Failed => 1,
            RunStatus::BudgetExhausted => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: RunMode,
    pub status: RunStatus,
    pub metric: MetricKind,
    pub seed_prompt: String,
    pub best_prompt: String,
    /// On the fitness subsample.
    pub best_fitness: Option<f64>,
    /// Best prompt re-measured on the full holdout split.
    pub holdout_fitness: Option<f64>,
    pub epochs_completed: u32,
    pub epochs_planned: u32,
    pub history: Vec<EpochRecord>,
    pub calls_per_purpose: BTreeMap<String, u64>,
    pub total_calls: u64,
    pub call_budget: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub(crate) fn calls_by_purpose(ledger: &BudgetLedger) -> BTreeMap<String, u64> {
    Purpose::ALL
        .iter()
        .map(|p| (p.as_str().to_string(), ledger.used(*p)))
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-readable summary with a per-epoch table.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let mode = match self.mode {
            RunMode::Reflective => "reflective",
            RunMode::BaselineGa => "baseline-ga",
        };
        let status = match self.status {
            RunStatus::Completed => "completed",
            RunStatus::BudgetExhausted => "stopped: call budget exhausted",
            RunStatus::Failed => "failed",
        };
        let _ = writeln!(s, "mode:            {mode}");
        let _ = writeln!(s, "status:          {status}");
        if let Some(err) = &self.error {
            let _ = writeln!(s, "error:           {err}");
        }
        let _ = writeln!(s, "epochs:          {}/{}", self.epochs_completed, self.epochs_planned);
        let _ = writeln!(s, "best fitness:    {} ({:?})", opt(self.best_fitness), self.metric);
        let _ = writeln!(s, "holdout fitness: {}", opt(self.holdout_fitness));
        let _ = writeln!(s, "llm calls:       {}/{}", self.total_calls, self.call_budget);
        for (purpose, n) in &self.calls_per_purpose {
            let _ = writeln!(s, "  {purpose:<16} {n}");
        }
        let _ = writeln!(s, "best prompt:\n  {}", self.best_prompt.replace('\n', "\n  "));
        if !self.history.is_empty() {
            let _ = writeln!(s, "\n{:>5}  {:>8}  {:>8}  {:>4}  {:>7}  done", "epoch", "best", "mean", "new", "relaxed");
            for r in &self.history {
                let _ = writeln!(
                    s,
                    "{:>5}  {:>8}  {:>8}  {:>4}  {:>7}  {}",
                    r.epoch,
                    opt(r.best_fitness),
                    opt(r.mean_fitness),
                    r.new_individuals.len(),
                    r.relaxed_pairs,
                    if r.completed { "yes" } else { "no" }
                );
            }
        }
        s
    }
}
