//! Reflective evolutionary prompt optimization.
//!
//! A population of candidate prompts is evolved with an LLM acting as the
//! variation operator. Each epoch pairs parents by roulette-wheel selection,
//! asks the LLM to contrast each pair (short-term reflection), recombines the
//! pair under that hint, folds the epoch's hints into an accumulating memory
//! (long-term reflection), and rewrites the best-so-far prompt under that
//! memory (elitist mutation). Survivors are drawn with a low-temperature
//! softmax and the elite is reinserted before every epoch.
//!
//! The LLM sits behind [`gateway::Gateway`], which fronts either an
//! OpenAI-compatible HTTP endpoint or a deterministic rule-based mock, so the
//! whole pipeline runs offline in tests.

pub mod config;
pub mod data;
pub mod demo;
pub mod digest;
pub mod engine;
pub mod eval;
pub mod gateway;
pub mod operators;
pub mod parallel;
pub mod rng;
pub mod selection;
pub mod types;

pub use config::EvolutionConfig;
pub use engine::{run, run_baseline_ga, RunMode, RunReport, RunState, RunStatus};
pub use gateway::{Gateway, Purpose};
pub use types::{MetricKind, PromptIndividual, TaskSpec};
