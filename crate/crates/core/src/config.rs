use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("invalid config: {field} {problem}")]
pub struct ConfigError {
    pub field: &'static str,
    pub problem: String,
}

fn bad(field: &'static str, problem: impl Into<String>) -> ConfigError {
    ConfigError {
        field,
        problem: problem.into(),
    }
}

/// Hyperparameters of one optimization run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub population_size: usize,
    pub epochs: u32,
    /// Parent pairs per epoch; `None` means `ceil(population_size / 2)`.
    pub pairs_per_epoch: Option<usize>,
    pub survival_temperature: f64,
    pub rng_seed: u64,
    /// Hard cap on logical LLM calls for the whole run, fitness evaluation included.
    pub max_llm_calls: u64,
    pub eval_subsample_size: usize,
    /// Decoding temperature for reflection, crossover, mutation and paraphrasing.
    pub operator_temperature: f64,
    /// Decoding temperature of the model being prompted during evaluation.
    pub task_temperature: f64,
    pub operator_max_tokens: u32,
    pub task_max_tokens: u32,
    pub parallelism: usize,
    /// Character cap on the long-term memory text.
    pub memory_char_cap: usize,
    /// Also show the long-term memory to crossover requests.
    pub memory_in_crossover: bool,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            population_size: 10,
            epochs: 10,
            pairs_per_epoch: None,
            survival_temperature: 0.1,
            rng_seed: 42,
            max_llm_calls: 20_000,
            eval_subsample_size: 50,
            operator_temperature: 0.7,
            task_temperature: 0.0,
            operator_max_tokens: 1024,
            task_max_tokens: 256,
            parallelism: 1,
            memory_char_cap: 4000,
            memory_in_crossover: false,
        }
    }
}

impl EvolutionConfig {
    pub fn pairs(&self) -> usize {
        self.pairs_per_epoch
            .unwrap_or_else(|| self.population_size.div_ceil(2))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.population_size < 2 {
            return Err(bad("population_size", "must be at least 2"));
        }
        if self.epochs < 1 {
            return Err(bad("epochs", "must be at least 1"));
        }
        if self.pairs() < 1 {
            return Err(bad("pairs_per_epoch", "must be at least 1"));
        }
        if !(self.survival_temperature.is_finite() && self.survival_temperature > 0.0) {
            return Err(bad("survival_temperature", "must be positive"));
        }
        if self.eval_subsample_size < 1 {
            return Err(bad("eval_subsample_size", "must be at least 1"));
        }
        for (field, t) in [
            ("operator_temperature", self.operator_temperature),
            ("task_temperature", self.task_temperature),
        ] {
            if !(t.is_finite() && t >= 0.0) {
                return Err(bad(field, "must be a non-negative number"));
            }
        }
        if self.operator_max_tokens == 0 {
            return Err(bad("operator_max_tokens", "must be positive"));
        }
        if self.task_max_tokens == 0 {
            return Err(bad("task_max_tokens", "must be positive"));
        }
        if self.parallelism < 1 {
            return Err(bad("parallelism", "must be at least 1"));
        }
        if self.memory_char_cap < 1 {
            return Err(bad("memory_char_cap", "must be positive"));
        }
        Ok(())
    }
}
