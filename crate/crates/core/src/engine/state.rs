use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::EvolutionConfig;
use crate::eval::CachedFitness;
use crate::gateway::BudgetLedger;
use crate::rng::RngState;
use crate::types::{IndividualId, LongTermMemory, Population, PromptIndividual};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Reflection-guided crossover plus elitist mutation.
    Reflective,
    /// Plain GA: hint-free crossover then a generic mutation.
    BaselineGa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: u32,
    /// False only for an epoch cut short by the call budget.
    pub completed: bool,
    /// Best-so-far fitness at the end of the epoch.
    pub best_fitness: Option<f64>,
    pub mean_fitness: Option<f64>,
    /// Individuals created and evaluated during the epoch.
    pub new_individuals: Vec<IndividualId>,
    pub relaxed_pairs: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub mode: RunMode,
    pub seed_prompt: String,
    pub config: EvolutionConfig,
    pub population: Population,
    pub memory: LongTermMemory,
    /// Completed epochs.
    pub epoch: u32,
    pub rng: RngState,
    pub ledger: BudgetLedger,
    pub history: Vec<EpochRecord>,
    pub next_id: u64,
    pub fitness_cache: BTreeMap<String, CachedFitness>,
    /// Digest of the fitness subsample the run was started on.
    pub sample_digest: String,
    /// Set when the call budget stopped the run.
    pub terminated: bool,
    /// Evaluated individuals from an epoch the budget cut short.
    #[serde(default)]
    pub pending: Vec<PromptIndividual>,
}

impl RunState {
    pub fn is_complete(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    pub fn elite(&self) -> Option<&PromptIndividual> {
        self.population.elite.as_ref()
    }

    pub fn completed_records(&self) -> usize {
        self.history.iter().filter(|r| r.completed).count()
    }
}
