//! The evolution loop.
//!
//! One epoch: reinsert the elite, draw parent pairs, reflect on each pair,
//! cross each pair over under its hint, fold the hints into long-term memory,
//! mutate the elite under that memory, evaluate the newcomers, then sample
//! the next population from parents and newcomers together.
//!
//! Random numbers are only drawn on the sequential control path (pairing and
//! survival), so `parallelism` never changes a run's trajectory.

mod report;
mod select;
mod state;

use std::mem;

use thiserror::Error;

use crate::config::{ConfigError, EvolutionConfig};
use crate::data::subsample;
use crate::digest::digest_json;
use crate::eval::{AuditSink, EvalError, EvalSample, EvalSettings, Evaluator, FitnessCache};
use crate::gateway::{Gateway, GatewayError};
use crate::operators::{self, OperatorContext, OperatorError, OperatorTemplates};
use crate::parallel::parallel_map;
use crate::rng::{RngStateError, RunRng};
use crate::selection::SelectionError;
use crate::types::{
    IndividualId, LongTermMemory, Origin, Population, PromptIndividual, TaskSpec, ValidationError,
};

pub use report::{RunReport, RunStatus};
pub use select::{
    reinsert_elite, select_parent_pairs, survival_pool, survival_select, ParentSelection, PAIR_ATTEMPTS,
};
pub use state::{EpochRecord, RunMode, RunState};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("call budget exhausted: {0}")]
    Budget(GatewayError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Operator(OperatorError),
    #[error(transparent)]
    Eval(EvalError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Rng(#[from] RngStateError),
    #[error("{0}")]
    Setup(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl EngineError {
    pub fn is_budget(&self) -> bool {
        matches!(self, EngineError::Budget(_))
    }
}

impl From<OperatorError> for EngineError {
    fn from(e: OperatorError) -> Self {
        match e {
            OperatorError::Gateway(g) if g.is_budget() => EngineError::Budget(g),
            other => EngineError::Operator(other),
        }
    }
}

impl From<EvalError> for EngineError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Gateway(g) if g.is_budget() => EngineError::Budget(g),
            other => EngineError::Eval(other),
        }
    }
}

/// A run that ended in an error, with the report of what it got done.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct RunFailure {
    pub error: EngineError,
    pub report: Box<RunReport>,
}

/// Task, data and templates shared by every step of a run.
#[derive(Clone, Copy)]
pub struct RunSetup<'a> {
    pub task: &'a TaskSpec,
    /// The whole fitness split; the run scores on a seeded subsample of it.
    pub fitness_samples: &'a [EvalSample],
    pub holdout_samples: Option<&'a [EvalSample]>,
    pub templates: &'a OperatorTemplates,
    pub audit: Option<&'a AuditSink>,
}

impl<'a> RunSetup<'a> {
    pub fn new(task: &'a TaskSpec, fitness_samples: &'a [EvalSample], templates: &'a OperatorTemplates) -> Self {
        Self {
            task,
            fitness_samples,
            holdout_samples: None,
            templates,
            audit: None,
        }
    }

    pub fn with_holdout(mut self, holdout: &'a [EvalSample]) -> Self {
        self.holdout_samples = Some(holdout);
        self
    }

    pub fn with_audit(mut self, audit: &'a AuditSink) -> Self {
        self.audit = Some(audit);
        self
    }

    fn fitness_subsample(&self, config: &EvolutionConfig) -> Vec<EvalSample> {
        subsample(self.fitness_samples, config.eval_subsample_size, config.rng_seed)
    }
}

/// Outcome of a single [`run_epoch`] call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpochOutcome {
    Completed,
    /// The budget ran out; the state is marked terminated.
    BudgetExhausted,
}

fn eval_settings(config: &EvolutionConfig) -> EvalSettings {
    EvalSettings {
        temperature: config.task_temperature,
        max_tokens: config.task_max_tokens,
        parallelism: config.parallelism,
        ..EvalSettings::default()
    }
}

fn operator_context<'a>(setup: &RunSetup<'a>, config: &EvolutionConfig, gateway: &'a Gateway) -> OperatorContext<'a> {
    OperatorContext {
        gateway,
        templates: setup.templates,
        task: setup.task,
        temperature: config.operator_temperature,
        max_tokens: config.operator_max_tokens,
    }
}

/// Scores every individual without a fitness, in order. Individuals scored
/// before an error keep their fitness.
fn evaluate_missing(
    individuals: &mut [PromptIndividual],
    evaluator: &Evaluator<'_>,
    gateway: &Gateway,
    cache: &FitnessCache,
) -> Result<(), EngineError> {
    for ind in individuals.iter_mut().filter(|i| i.fitness.is_none()) {
        let score = evaluator.evaluate(&ind.text, gateway, cache)?;
        ind.fitness = Some(score.value);
    }
    Ok(())
}

fn check_gateway_budget(config: &EvolutionConfig, gateway: &Gateway) {
    let max = gateway.ledger().calls_max;
    if max != config.max_llm_calls {
        tracing::warn!(gateway = max, config = config.max_llm_calls, "gateway call cap differs from max_llm_calls");
    }
}

/// Seed plus `N - 1` paraphrases, all evaluated; the best becomes the elite.
///
/// `best_seen` tracks the best evaluated individual so a budget stop can
/// still report something.
fn init_inner(
    seed_prompt: &str,
    mode: RunMode,
    setup: &RunSetup<'_>,
    config: &EvolutionConfig,
    gateway: &Gateway,
    best_seen: &mut Option<PromptIndividual>,
) -> Result<RunState, EngineError> {
    config.validate()?;
    setup.task.validate()?;
    let seed = PromptIndividual::new(IndividualId(0), seed_prompt, Origin::Seed, vec![], 0)?;
    let samples = setup.fitness_subsample(config);
    let evaluator = Evaluator::new(setup.task, &samples, eval_settings(config))?;
    let evaluator = match setup.audit {
        Some(a) => evaluator.with_audit(a),
        None => evaluator,
    };
    gateway.set_epoch(0);
    let ctx = operator_context(setup, config, gateway);
    let paraphrases = operators::paraphrase_seed(&ctx, seed_prompt, config.population_size - 1)?;

    let mut individuals = vec![seed];
    for (i, text) in paraphrases.into_iter().enumerate() {
        individuals.push(PromptIndividual::new(
            IndividualId(i as u64 + 1),
            text,
            Origin::Paraphrase,
            vec![IndividualId(0)],
            0,
        )?);
    }
    let cache = FitnessCache::default();
    for ind in individuals.iter_mut() {
        let score = evaluator.evaluate(&ind.text, gateway, &cache)?;
        ind.fitness = Some(score.value);
        if best_seen.as_ref().is_none_or(|b| score.value > b.fitness_or_min()) {
            *best_seen = Some(ind.clone());
        }
    }
    let next_id = individuals.len() as u64;
    let mut population = Population::new(individuals)?;
    for ind in population.individuals.clone() {
        population.offer_elite(&ind);
    }
    Ok(RunState {
        mode,
        seed_prompt: seed_prompt.to_string(),
        config: config.clone(),
        population,
        memory: LongTermMemory::default(),
        epoch: 0,
        rng: RunRng::from_seed(config.rng_seed).state(),
        ledger: gateway.ledger(),
        history: Vec::new(),
        next_id,
        fitness_cache: cache.snapshot(),
        sample_digest: digest_json(&samples),
        terminated: false,
        pending: Vec::new(),
    })
}

pub fn init_population(
    seed_prompt: &str,
    mode: RunMode,
    setup: &RunSetup<'_>,
    config: &EvolutionConfig,
    gateway: &Gateway,
) -> Result<RunState, EngineError> {
    init_inner(seed_prompt, mode, setup, config, gateway, &mut None)
}

/// Splits per-item operator results into successes and warnings. A budget
/// error anywhere wins; any other error only drops its item.
fn collect<T>(results: Vec<Result<T, OperatorError>>, what: &str, warnings: &mut Vec<String>) -> Result<Vec<Option<T>>, EngineError> {
    let mut out = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => out.push(Some(v)),
            Err(e) if e.is_budget() => return Err(e.into()),
            Err(OperatorError::Gateway(e)) => return Err(EngineError::Operator(OperatorError::Gateway(e))),
            Err(e) => {
                let msg = format!("{what} {i} skipped: {e}");
                tracing::warn!("{msg}");
                warnings.push(msg);
                out.push(None);
            }
        }
    }
    Ok(out)
}

struct EpochWork {
    population: Vec<PromptIndividual>,
    newcomers: Vec<PromptIndividual>,
    memory: LongTermMemory,
    relaxed_pairs: usize,
    warnings: Vec<String>,
    elite: Option<PromptIndividual>,
    rng: RunRng,
}

/// Runs one epoch in place. Budget exhaustion is not an error: the state is
/// marked terminated, evaluated newcomers are kept in `pending`, and the
/// partial epoch is recorded as not completed.
pub fn run_epoch(state: &mut RunState, setup: &RunSetup<'_>, gateway: &Gateway) -> Result<EpochOutcome, EngineError> {
    if state.is_complete() {
        return Err(EngineError::Setup(format!(
            "all {} epochs are already done",
            state.config.epochs
        )));
    }
    if state.terminated {
        return Err(EngineError::Setup("run was stopped by the call budget".into()));
    }
    let epoch = state.epoch + 1;
    gateway.set_epoch(epoch);
    let samples = setup.fitness_subsample(&state.config);
    let evaluator = Evaluator::new(setup.task, &samples, eval_settings(&state.config))?;
    let evaluator = match setup.audit {
        Some(a) => evaluator.with_audit(a),
        None => evaluator,
    };
    let cache = FitnessCache::from_snapshot(mem::take(&mut state.fitness_cache));
    let mut work = EpochWork {
        population: state.population.individuals.clone(),
        newcomers: Vec::new(),
        memory: state.memory.clone(),
        relaxed_pairs: 0,
        warnings: Vec::new(),
        elite: state.population.elite.clone(),
        rng: RunRng::from_state(&state.rng)?,
    };
    let result = epoch_steps(state, setup, gateway, &evaluator, &cache, epoch, &mut work);
    state.fitness_cache = cache.snapshot();
    state.ledger = gateway.ledger();

    let evaluated: Vec<PromptIndividual> = work.newcomers.iter().filter(|i| i.fitness.is_some()).cloned().collect();
    let max_new_id = work.newcomers.iter().map(|i| i.id.0 + 1).max().unwrap_or(0);
    match result {
        Ok(survivors) => {
            let mut population = Population {
                individuals: survivors,
                generation: epoch,
                elite: work.elite,
            };
            for ind in &evaluated {
                population.offer_elite(ind);
            }
            population.validate()?;
            state.history.push(EpochRecord {
                epoch,
                completed: true,
                best_fitness: population.elite_fitness(),
                mean_fitness: population.mean_fitness(),
                new_individuals: evaluated.iter().map(|i| i.id).collect(),
                relaxed_pairs: work.relaxed_pairs,
                warnings: work.warnings,
            });
            state.population = population;
            state.memory = work.memory;
            state.rng = work.rng.state();
            state.next_id = state.next_id.max(max_new_id);
            state.epoch = epoch;
            Ok(EpochOutcome::Completed)
        }
        Err(e) if e.is_budget() => {
            tracing::warn!(epoch, "call budget exhausted mid-epoch");
            for ind in &evaluated {
                state.population.offer_elite(ind);
            }
            state.history.push(EpochRecord {
                epoch,
                completed: false,
                best_fitness: state.population.elite_fitness(),
                mean_fitness: state.population.mean_fitness(),
                new_individuals: evaluated.iter().map(|i| i.id).collect(),
                relaxed_pairs: work.relaxed_pairs,
                warnings: work.warnings,
            });
            // ids handed out in this epoch stay used
            state.next_id = state.next_id.max(max_new_id);
            state.pending = evaluated;
            state.terminated = true;
            Ok(EpochOutcome::BudgetExhausted)
        }
        Err(e) => Err(e),
    }
}

fn epoch_steps(
    state: &RunState,
    setup: &RunSetup<'_>,
    gateway: &Gateway,
    evaluator: &Evaluator<'_>,
    cache: &FitnessCache,
    epoch: u32,
    work: &mut EpochWork,
) -> Result<Vec<PromptIndividual>, EngineError> {
    let config = &state.config;
    let ctx = operator_context(setup, config, gateway);
    let elite = work
        .elite
        .clone()
        .ok_or_else(|| EngineError::Setup("population has no elite".into()))?;

    // 1. elite back in
    reinsert_elite(&mut work.population, &elite);
    // 2. parents
    let selection = select_parent_pairs(&work.population, config.pairs(), &mut work.rng)?;
    work.relaxed_pairs = selection.pairs.iter().filter(|p| p.constraint_relaxed).count();
    let mut next_id = state.next_id;
    let ids: Vec<IndividualId> = (0..selection.pairs.len())
        .map(|i| IndividualId(next_id + i as u64))
        .collect();
    next_id += ids.len() as u64;

    match state.mode {
        RunMode::Reflective => {
            // 3. short-term reflection per pair
            let hints = parallel_map(&selection.pairs, config.parallelism, |_, pair| {
                operators::short_term_reflect(&ctx, pair, epoch)
            });
            let hints = collect(hints, "short-term reflection", &mut work.warnings)?;
            // 4. crossover per pair under its hint
            let memory_for_crossover = config.memory_in_crossover.then_some(&work.memory);
            let jobs: Vec<_> = selection
                .pairs
                .iter()
                .zip(&hints)
                .zip(&ids)
                .filter_map(|((pair, hint), id)| hint.as_ref().map(|h| (pair, h, *id)))
                .collect();
            let children = parallel_map(&jobs, config.parallelism, |_, (pair, hint, id)| {
                operators::crossover(&ctx, pair, hint, memory_for_crossover, *id, epoch)
            });
            work.newcomers
                .extend(collect(children, "crossover", &mut work.warnings)?.into_iter().flatten());
            // 5. long-term memory
            let hints: Vec<_> = hints.into_iter().flatten().collect();
            let update = operators::long_term_reflect(&ctx, &work.memory, &hints, epoch, config.memory_char_cap)?;
            if let Some(w) = update.warning {
                work.warnings.push(w);
            }
            work.memory = update.memory;
            // 6. elitist mutation
            let mutant = operators::elitist_mutation(&ctx, &elite, &work.memory, IndividualId(next_id), epoch);
            work.newcomers
                .extend(collect(vec![mutant], "elitist mutation", &mut work.warnings)?.into_iter().flatten());
        }
        RunMode::BaselineGa => {
            let jobs: Vec<_> = selection.pairs.iter().zip(&ids).collect();
            let children = parallel_map(&jobs, config.parallelism, |_, (pair, id)| {
                operators::baseline_offspring(&ctx, pair, **id, epoch)
            });
            work.newcomers
                .extend(collect(children, "offspring", &mut work.warnings)?.into_iter().flatten());
        }
    }

    // 7. evaluate
    evaluate_missing(&mut work.newcomers, evaluator, gateway, cache)?;
    // 8. survival
    let candidates: Vec<PromptIndividual> = work.population.iter().chain(&work.newcomers).cloned().collect();
    let pool = survival_pool(candidates, config.population_size);
    let survivors = survival_select(pool, config.population_size, config.survival_temperature, &mut work.rng)?;
    // 9. elite update happens in the caller, over every evaluated newcomer
    Ok(survivors)
}

fn report_from(
    state: Option<&RunState>,
    fallback: (&str, RunMode, &EvolutionConfig, Option<&PromptIndividual>),
    setup: &RunSetup<'_>,
    gateway: &Gateway,
    status: RunStatus,
    holdout_fitness: Option<f64>,
    error: Option<String>,
) -> RunReport {
    let (seed_prompt, mode, config, best_seen) = fallback;
    let ledger = gateway.ledger();
    let (best, epochs_completed, history) = match state {
        Some(s) => (s.elite().or(best_seen), s.epoch, s.history.clone()),
        None => (best_seen, 0, Vec::new()),
    };
    RunReport {
        mode,
        status,
        metric: setup.task.metric,
        seed_prompt: seed_prompt.to_string(),
        best_prompt: best.map_or_else(|| seed_prompt.to_string(), |b| b.text.clone()),
        best_fitness: best.and_then(|b| b.fitness),
        holdout_fitness,
        epochs_completed,
        epochs_planned: config.epochs,
        history,
        calls_per_purpose: report::calls_by_purpose(&ledger),
        total_calls: ledger.total(),
        call_budget: ledger.calls_max,
        error,
    }
}

/// Called with the state after initialization, after every completed epoch,
/// and once more if the budget stops the run mid-epoch.
pub type CheckpointHook<'h> = dyn FnMut(&RunState) -> Result<(), String> + 'h;

/// Full reflective run from a seed prompt.
pub fn run(
    seed_prompt: &str,
    setup: &RunSetup<'_>,
    config: &EvolutionConfig,
    gateway: &Gateway,
) -> Result<RunReport, RunFailure> {
    run_with(seed_prompt, RunMode::Reflective, setup, config, gateway, &mut |_| Ok(()))
}

/// Plain GA comparator on the same machinery.
pub fn run_baseline_ga(
    seed_prompt: &str,
    setup: &RunSetup<'_>,
    config: &EvolutionConfig,
    gateway: &Gateway,
) -> Result<RunReport, RunFailure> {
    run_with(seed_prompt, RunMode::BaselineGa, setup, config, gateway, &mut |_| Ok(()))
}

pub fn run_with(
    seed_prompt: &str,
    mode: RunMode,
    setup: &RunSetup<'_>,
    config: &EvolutionConfig,
    gateway: &Gateway,
    on_checkpoint: &mut CheckpointHook<'_>,
) -> Result<RunReport, RunFailure> {
    check_gateway_budget(config, gateway);
    let mut best_seen = None;
    let state = match init_inner(seed_prompt, mode, setup, config, gateway, &mut best_seen) {
        Ok(state) => state,
        Err(e) => {
            let budget = e.is_budget();
            let (status, message) = if budget {
                tracing::warn!("call budget exhausted while building the initial population");
                (RunStatus::BudgetExhausted, None)
            } else {
                (RunStatus::Failed, Some(e.to_string()))
            };
            let fallback = (seed_prompt, mode, config, best_seen.as_ref());
            let report = report_from(None, fallback, setup, gateway, status, None, message);
            return if budget {
                Ok(report)
            } else {
                Err(RunFailure {
                    error: e,
                    report: Box::new(report),
                })
            };
        }
    };
    if let Err(e) = on_checkpoint(&state) {
        let error = EngineError::Checkpoint(e);
        let fallback = (seed_prompt, mode, config, None);
        let report = report_from(Some(&state), fallback, setup, gateway, RunStatus::Failed, None, Some(error.to_string()));
        return Err(RunFailure {
            error,
            report: Box::new(report),
        });
    }
    drive(state, setup, gateway, on_checkpoint)
}

/// Continues a checkpointed run to its configured epoch count. A run stopped
/// by the budget restarts its interrupted epoch.
pub fn resume(
    mut state: RunState,
    setup: &RunSetup<'_>,
    gateway: &Gateway,
    on_checkpoint: &mut CheckpointHook<'_>,
) -> Result<RunReport, RunFailure> {
    let fail = |state: &RunState, error: EngineError| {
        let report = report_from(
            Some(state),
            (&state.seed_prompt, state.mode, &state.config, None),
            setup,
            gateway,
            RunStatus::Failed,
            None,
            Some(error.to_string()),
        );
        RunFailure {
            error,
            report: Box::new(report),
        }
    };
    check_gateway_budget(&state.config, gateway);
    let digest = digest_json(&setup.fitness_subsample(&state.config));
    if digest != state.sample_digest {
        let e = EngineError::Setup("fitness data differs from the data the run started with".into());
        return Err(fail(&state, e));
    }
    if state.terminated {
        state.terminated = false;
        state.pending.clear();
        while state.history.last().is_some_and(|r| !r.completed) {
            state.history.pop();
        }
    }
    gateway.restore_ledger(&state.ledger);
    drive(state, setup, gateway, on_checkpoint)
}

fn drive(
    mut state: RunState,
    setup: &RunSetup<'_>,
    gateway: &Gateway,
    on_checkpoint: &mut CheckpointHook<'_>,
) -> Result<RunReport, RunFailure> {
    let report = |state: &RunState, status, holdout, error| {
        report_from(
            Some(state),
            (&state.seed_prompt, state.mode, &state.config, None),
            setup,
            gateway,
            status,
            holdout,
            error,
        )
    };
    let fail = |state: &RunState, error: EngineError| RunFailure {
        report: Box::new(report(state, RunStatus::Failed, None, Some(error.to_string()))),
        error,
    };
    while !state.is_complete() {
        match run_epoch(&mut state, setup, gateway) {
            Ok(outcome) => {
                if let Err(e) = on_checkpoint(&state) {
                    return Err(fail(&state, EngineError::Checkpoint(e)));
                }
                if outcome == EpochOutcome::BudgetExhausted {
                    return Ok(report(&state, RunStatus::BudgetExhausted, None, None));
                }
            }
            Err(e) => return Err(fail(&state, e)),
        }
    }
    let Some(holdout) = setup.holdout_samples else {
        return Ok(report(&state, RunStatus::Completed, None, None));
    };
    let best = state.elite().map(|e| e.text.clone()).unwrap_or_else(|| state.seed_prompt.clone());
    let scored = Evaluator::new(setup.task, holdout, eval_settings(&state.config))
        .and_then(|ev| ev.evaluate(&best, gateway, &FitnessCache::default()));
    match scored.map_err(EngineError::from) {
        Ok(score) => Ok(report(&state, RunStatus::Completed, Some(score.value), None)),
        Err(e) if e.is_budget() => {
            tracing::warn!("call budget exhausted during holdout scoring");
            Ok(report(&state, RunStatus::BudgetExhausted, None, None))
        }
        Err(e) => Err(fail(&state, e)),
    }
}
