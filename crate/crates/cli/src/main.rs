//! `reflective-prompt`: optimize, resume and score prompts from the shell.
//!
//! Standard output only ever carries JSON results; progress and diagnostics
//! go to standard error. Exit codes: 0 done, 1 error, 2 call budget exhausted.

mod rundir;
mod settings;

use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use reflective_core::data::{load_checkpoint, save_checkpoint};
use reflective_core::demo;
use reflective_core::engine::{self, RunMode, RunSetup, RunState, RunStatus};
use reflective_core::eval::{evaluate_prompt, AuditSink, EvalSample, EvalSettings};
use reflective_core::gateway::CallLog;
use reflective_core::Gateway;
use tracing_subscriber::EnvFilter;

use rundir::{Manifest, RunDir};
use settings::{absolute, load_task, BackendChoice, DataRef, Settings};

#[derive(Parser)]
#[command(name = "reflective-prompt", version, about = "Evolve LLM prompts with reflection-guided operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a new optimization run.
    Optimize(OptimizeArgs),
    /// Continue a checkpointed run.
    Resume(ResumeArgs),
    /// Score one prompt on a dataset and print the fitness.
    Evaluate(EvaluateArgs),
    /// Run the bundled offline demo (same as `optimize --mock` with no task).
    Demo(DemoArgs),
}

#[derive(Args)]
struct BackendFlags {
    /// Use the scripted mock LLM of the bundled demo; no network access.
    #[arg(long)]
    mock: bool,
    /// Use a mock LLM defined by a JSON rule file.
    #[arg(long, value_name = "FILE")]
    mock_rules: Option<PathBuf>,
}

#[derive(Args)]
struct OptimizeArgs {
    /// JSON config: evolution settings plus an optional "backend" section.
    config: Option<PathBuf>,
    #[arg(long)]
    seed_prompt: Option<String>,
    /// Task file (JSON). Defaults to the bundled demo task with --mock.
    #[arg(long)]
    task: Option<PathBuf>,
    /// Fitness dataset (JSONL). Defaults to the task's fitness_path.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Holdout dataset (JSONL). Defaults to the task's holdout_path.
    #[arg(long)]
    holdout: Option<PathBuf>,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
    /// Run the plain GA comparator instead of the reflective loop.
    #[arg(long)]
    baseline: bool,
    #[command(flatten)]
    backend: BackendFlags,
    /// Replace an existing run directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ResumeArgs {
    run_dir: PathBuf,
    /// Raise the call budget, e.g. to continue a run that ran out.
    #[arg(long)]
    max_llm_calls: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// File holding the prompt text.
    prompt_file: PathBuf,
    #[arg(long)]
    task: PathBuf,
    /// Dataset to score on. Defaults to the task's holdout, then fitness split.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendFlags,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long, default_value = "reflective-demo-run")]
    out: PathBuf,
    #[arg(long)]
    baseline: bool,
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Optimize(args) => optimize(args),
        Command::Resume(args) => resume(args),
        Command::Evaluate(args) => evaluate(args).map(|()| 0),
        Command::Demo(args) => optimize(OptimizeArgs {
            config: None,
            seed_prompt: None,
            task: None,
            dataset: None,
            holdout: None,
            out: args.out,
            baseline: args.baseline,
            backend: BackendFlags {
                mock: true,
                mock_rules: None,
            },
            force: args.force,
        }),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn optimize(args: OptimizeArgs) -> Result<u8> {
    let backend = BackendChoice::from_flags(args.backend.mock, args.backend.mock_rules.as_deref())?;
    let bundled = args.task.is_none();
    if bundled && backend != BackendChoice::DemoMock {
        bail!("--task is required unless --mock selects the bundled demo");
    }
    let settings = match &args.config {
        Some(p) => Settings::load(p)?,
        None if bundled => Settings {
            evolution: demo::config(),
            ..Settings::default()
        },
        None => Settings::default(),
    };
    let mut task = match &args.task {
        Some(p) => load_task(p)?,
        None => demo::task(),
    };
    let fitness_data = match (&args.dataset, &task.fitness_path) {
        (Some(p), _) => DataRef::Path(absolute(p)),
        (None, _) if bundled => DataRef::BundledFitness,
        (None, Some(p)) => DataRef::Path(p.clone()),
        (None, None) => bail!("no dataset: pass --dataset or set fitness_path in the task file"),
    };
    let holdout_data = match (&args.holdout, &task.holdout_path) {
        (Some(p), _) => Some(DataRef::Path(absolute(p))),
        (None, _) if bundled => Some(DataRef::BundledHoldout),
        (None, Some(p)) => Some(DataRef::Path(p.clone())),
        (None, None) => None,
    };
    if bundled {
        task.fitness_path = None;
        task.holdout_path = None;
    }
    let seed_prompt = match args.seed_prompt {
        Some(s) => s,
        None if bundled => demo::SEED_PROMPT.to_string(),
        None => bail!("--seed-prompt is required with --task"),
    };
    if seed_prompt.trim().is_empty() {
        bail!("the seed prompt is empty");
    }
    // fail before touching the output directory
    let fitness = fitness_data.load()?;
    let holdout = holdout_data.as_ref().map(DataRef::load).transpose()?;
    settings.templates()?;
    backend.build(&settings)?;

    let manifest = Manifest {
        seed_prompt,
        mode: if args.baseline {
            RunMode::BaselineGa
        } else {
            RunMode::Reflective
        },
        task,
        fitness_data,
        holdout_data,
        backend,
    };
    let dir = RunDir::create(&args.out, args.force, &manifest, &settings)?;
    tracing::info!(dir = %dir.path.display(), "run directory created");
    execute(&dir, &manifest, &settings, &fitness, holdout.as_deref(), None)
}

fn resume(args: ResumeArgs) -> Result<u8> {
    let dir = RunDir::open(&args.run_dir)?;
    let manifest = dir.manifest()?;
    let mut settings = dir.settings()?;
    let checkpoint = dir.file(rundir::CHECKPOINT);
    if !checkpoint.is_file() {
        bail!(
            "no checkpoint in {}: the run stopped before its initial population was scored",
            dir.path.display()
        );
    }
    let mut state: RunState = load_checkpoint(&checkpoint)?;
    if let Some(max) = args.max_llm_calls {
        settings.evolution.max_llm_calls = max;
        state.config.max_llm_calls = max;
        dir.write_settings(&settings)?;
    }
    if state.is_complete() && !state.terminated {
        eprintln!("already complete: {} of {} epochs done", state.epoch, state.config.epochs);
        return Ok(0);
    }
    let fitness = manifest.fitness_data.load()?;
    let holdout = manifest.holdout_data.as_ref().map(DataRef::load).transpose()?;
    execute(&dir, &manifest, &settings, &fitness, holdout.as_deref(), Some(state))
}

fn execute(
    dir: &RunDir,
    manifest: &Manifest,
    settings: &Settings,
    fitness: &[EvalSample],
    holdout: Option<&[EvalSample]>,
    resume_from: Option<RunState>,
) -> Result<u8> {
    let templates = settings.templates()?;
    let calls = CallLog::open(&dir.file(rundir::CALL_LOG)).context("cannot open call log")?;
    let gateway =
        Gateway::new(manifest.backend.build(settings)?, settings.evolution.max_llm_calls).with_call_log(calls);
    let audit = AuditSink::open(&dir.file(rundir::AUDIT)).context("cannot open audit log")?;
    let mut setup = RunSetup::new(&manifest.task, fitness, &templates).with_audit(&audit);
    if let Some(h) = holdout {
        setup = setup.with_holdout(h);
    }
    let checkpoint = dir.file(rundir::CHECKPOINT);
    let mut hook = |state: &RunState| {
        if let Some(last) = state.history.last() {
            tracing::info!(
                epoch = last.epoch,
                of = state.config.epochs,
                best = ?last.best_fitness,
                completed = last.completed,
                "epoch finished"
            );
        }
        save_checkpoint(state, &checkpoint).map_err(|e| e.to_string())
    };
    let outcome = match resume_from {
        None => engine::run_with(
            &manifest.seed_prompt,
            manifest.mode,
            &setup,
            &settings.evolution,
            &gateway,
            &mut hook,
        ),
        Some(state) => engine::resume(state, &setup, &gateway, &mut hook),
    };
    let (report, failure) = match outcome {
        Ok(report) => (report, None),
        Err(f) => (*f.report, Some(f.error)),
    };
    std::fs::write(dir.file(rundir::REPORT_JSON), report.to_json()).context("cannot write report")?;
    std::fs::write(dir.file(rundir::REPORT_TEXT), report.render_text()).context("cannot write report")?;
    println!("{}", report.to_json());
    if let Some(err) = failure {
        return Err(anyhow::Error::new(err).context("run failed"));
    }
    if report.status == RunStatus::BudgetExhausted {
        tracing::warn!(calls = report.total_calls, "stopped early: call budget exhausted");
    }
    Ok(report.status.exit_code() as u8)
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let prompt = std::fs::read_to_string(&args.prompt_file)
        .with_context(|| format!("cannot read prompt file {}", args.prompt_file.display()))?;
    let prompt = prompt.trim();
    if prompt.is_empty() {
        bail!("prompt file {} is empty", args.prompt_file.display());
    }
    let settings = match &args.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    let task = load_task(&args.task)?;
    let data_path: &Path = match (&args.dataset, &task.holdout_path, &task.fitness_path) {
        (Some(p), _, _) | (None, Some(p), _) | (None, None, Some(p)) => p,
        (None, None, None) => bail!("no dataset: pass --dataset or set a path in the task file"),
    };
    let samples = DataRef::Path(data_path.to_path_buf()).load()?;
    let backend = BackendChoice::from_flags(args.backend.mock, args.backend.mock_rules.as_deref())?;
    let gateway = Gateway::new(backend.build(&settings)?, settings.evolution.max_llm_calls);
    let eval_settings = EvalSettings {
        temperature: settings.evolution.task_temperature,
        max_tokens: settings.evolution.task_max_tokens,
        parallelism: settings.evolution.parallelism,
        ..EvalSettings::default()
    };
    let score = evaluate_prompt(prompt, &task, &samples, &gateway, eval_settings)?;
    let out = serde_json::json!({
        "metric": score.metric,
        "fitness": score.value,
        "n_samples": score.n_samples,
        "llm_calls": gateway.ledger().total(),
    });
    println!("{out}");
    Ok(())
}
