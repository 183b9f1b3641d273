//! Domain types shared across the optimizer.

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ValidationError {
    #[error("prompt text is empty")]
    EmptyPrompt,
    #[error("fitness {0} is outside [0, 1]")]
    FitnessOutOfRange(f64),
    #[error("{origin:?} individual needs {expected} parent ids, found {found}")]
    ParentCount {
        origin: Origin,
        expected: usize,
        found: usize,
    },
    #[error("duplicate individual id {0}")]
    DuplicateId(IndividualId),
    #[error("task description is empty")]
    EmptyDescription,
    #[error("macro_f1 tasks need a non-empty label set")]
    MissingLabels,
    #[error("label alias {alias:?} is claimed by both {first:?} and {second:?}")]
    AliasClash {
        alias: String,
        first: String,
        second: String,
    },
    #[error("label {0:?} has an empty name or alias")]
    EmptyLabel(String),
    #[error("parent pair: {0}")]
    Pair(String),
}

/// Run-local identifier, assigned in increasing order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IndividualId(pub u64);

impl fmt::Display for IndividualId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Seed,
    Paraphrase,
    Crossover,
    ElitistMutation,
    BaselineOp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptIndividual {
    pub id: IndividualId,
    pub text: String,
    pub fitness: Option<f64>,
    pub origin: Origin,
    pub parent_ids: Vec<IndividualId>,
    pub epoch_created: u32,
    /// Set when an operator returned text identical to one of the parents.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub duplicate_of_parent: bool,
}

impl PromptIndividual {
    pub fn new(
        id: IndividualId,
        text: impl Into<String>,
        origin: Origin,
        parent_ids: Vec<IndividualId>,
        epoch_created: u32,
    ) -> Result<Self, ValidationError> {
        let individual = Self {
            id,
            text: text.into(),
            fitness: None,
            origin,
            parent_ids,
            epoch_created,
            duplicate_of_parent: false,
        };
        individual.validate()?;
        Ok(individual)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.text.trim().is_empty() {
            return Err(ValidationError::EmptyPrompt);
        }
        if let Some(f) = self.fitness {
            if !(0.0..=1.0).contains(&f) {
                return Err(ValidationError::FitnessOutOfRange(f));
            }
        }
        let expected = match self.origin {
            Origin::Crossover => Some(2),
            Origin::ElitistMutation => Some(1),
            _ => None,
        };
        if let Some(expected) = expected {
            if self.parent_ids.len() != expected {
                return Err(ValidationError::ParentCount {
                    origin: self.origin,
                    expected,
                    found: self.parent_ids.len(),
                });
            }
        }
        Ok(())
    }

    pub fn with_fitness(mut self, fitness: f64) -> Result<Self, ValidationError> {
        if !(0.0..=1.0).contains(&fitness) {
            return Err(ValidationError::FitnessOutOfRange(fitness));
        }
        self.fitness = Some(fitness);
        Ok(self)
    }

    /// Fitness for ordering; unevaluated individuals sort below everything.
    pub fn fitness_or_min(&self) -> f64 {
        self.fitness.unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub individuals: Vec<PromptIndividual>,
    pub generation: u32,
    /// Best individual seen at any point of the run.
    pub elite: Option<PromptIndividual>,
}

impl Population {
    pub fn new(individuals: Vec<PromptIndividual>) -> Result<Self, ValidationError> {
        let population = Self {
            individuals,
            generation: 0,
            elite: None,
        };
        population.validate()?;
        Ok(population)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut seen = HashSet::new();
        for ind in &self.individuals {
            ind.validate()?;
            if !seen.insert(ind.id) {
                return Err(ValidationError::DuplicateId(ind.id));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    pub fn elite_fitness(&self) -> Option<f64> {
        self.elite.as_ref().and_then(|e| e.fitness)
    }

    /// Replaces the elite when `candidate` is strictly better. Returns whether it did.
    pub fn offer_elite(&mut self, candidate: &PromptIndividual) -> bool {
        let Some(f) = candidate.fitness else {
            return false;
        };
        match self.elite_fitness() {
            Some(best) if f <= best => false,
            _ => {
                self.elite = Some(candidate.clone());
                true
            }
        }
    }

    pub fn mean_fitness(&self) -> Option<f64> {
        let scored: Vec<f64> = self.individuals.iter().filter_map(|i| i.fitness).collect();
        if scored.is_empty() {
            None
        } else {
            Some(scored.iter().sum::<f64>() / scored.len() as f64)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParentPair {
    pub better: PromptIndividual,
    pub worse: PromptIndividual,
    /// The distinct-fitness rule could not be met within the retry cap.
    #[serde(default)]
    pub constraint_relaxed: bool,
}

impl ParentPair {
    /// Orders two evaluated individuals into a strict better/worse pair.
    pub fn new(a: PromptIndividual, b: PromptIndividual) -> Result<Self, ValidationError> {
        let (fa, fb) = match (a.fitness, b.fitness) {
            (Some(fa), Some(fb)) => (fa, fb),
            _ => return Err(ValidationError::Pair("both members need a fitness".into())),
        };
        if fa == fb {
            return Err(ValidationError::Pair(format!(
                "members {} and {} share fitness {fa}",
                a.id, b.id
            )));
        }
        let (better, worse) = if fa > fb { (a, b) } else { (b, a) };
        Ok(Self {
            better,
            worse,
            constraint_relaxed: false,
        })
    }

    /// Pair that skips the distinct-fitness rule. Members must still be distinct individuals.
    pub fn relaxed(a: PromptIndividual, b: PromptIndividual) -> Self {
        let (better, worse) = if b.fitness_or_min() > a.fitness_or_min() {
            (b, a)
        } else {
            (a, b)
        };
        Self {
            better,
            worse,
            constraint_relaxed: true,
        }
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let (Some(fb), Some(fw)) = (self.better.fitness, self.worse.fitness) else {
            return Err(ValidationError::Pair("both members need a fitness".into()));
        };
        if self.constraint_relaxed {
            if self.better.id == self.worse.id {
                return Err(ValidationError::Pair("relaxed pair repeats one individual".into()));
            }
            return Ok(());
        }
        if fb > fw {
            Ok(())
        } else {
            Err(ValidationError::Pair(format!(
                "better fitness {fb} must exceed worse fitness {fw}"
            )))
        }
    }

    pub fn ids(&self) -> (IndividualId, IndividualId) {
        (self.better.id, self.worse.id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShortTermReflection {
    pub hint_text: String,
    pub pair_ids: (IndividualId, IndividualId),
    pub epoch: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LongTermMemory {
    pub memory_text: String,
    pub last_updated_epoch: u32,
    pub update_count: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    MacroF1,
    Meteor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
}

impl LabelSpec {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            aliases: Vec::new(),
        }
    }

    /// The name followed by every alias.
    pub fn surface_forms(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.name.as_str()).chain(self.aliases.iter().map(String::as_str))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub description: String,
    pub metric: MetricKind,
    #[serde(default)]
    pub labels: Vec<LabelSpec>,
    #[serde(default)]
    pub fitness_path: Option<PathBuf>,
    #[serde(default)]
    pub holdout_path: Option<PathBuf>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.description.trim().is_empty() {
            return Err(ValidationError::EmptyDescription);
        }
        if self.metric == MetricKind::MacroF1 {
            if self.labels.is_empty() {
                return Err(ValidationError::MissingLabels);
            }
            let mut owners: Vec<(String, &str)> = Vec::new();
            for label in &self.labels {
                for form in label.surface_forms() {
                    if form.trim().is_empty() {
                        return Err(ValidationError::EmptyLabel(label.name.clone()));
                    }
                    let key = form.to_lowercase();
                    if let Some((_, first)) = owners.iter().find(|(k, _)| *k == key) {
                        if *first != label.name {
                            return Err(ValidationError::AliasClash {
                                alias: form.to_string(),
                                first: first.to_string(),
                                second: label.name.clone(),
                            });
                        }
                    } else {
                        owners.push((key, &label.name));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn label_names(&self) -> Vec<&str> {
        self.labels.iter().map(|l| l.name.as_str()).collect()
    }
}
