//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.
//!
//! Run with `cargo test -p reflective-cli --test acceptance`.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use reflective_core::data::{load_checkpoint, save_checkpoint};
use reflective_core::demo;
use reflective_core::digest::sha256_hex;
use reflective_core::engine::{self, run_with, survival_select, select_parent_pairs, RunMode, RunSetup, RunState};
use reflective_core::eval::{macro_f1, meteor_sentence, EvalSample, MeteorParams, Prediction};
use reflective_core::gateway::{mock_program, Matcher, MockRule, Responder};
use reflective_core::operators::OperatorTemplates;
use reflective_core::rng::RunRng;
use reflective_core::selection::{normalize_weights, tempered_softmax};
use reflective_core::types::{IndividualId, Origin};
use reflective_core::{EvolutionConfig, Gateway, PromptIndividual, Purpose, RunReport, RunStatus};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn individuals(fitness: &[f64]) -> Vec<PromptIndividual> {
    fitness
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            PromptIndividual::new(IndividualId(i as u64), format!("prompt {i}"), Origin::Seed, vec![], 0)
                .and_then(|p| p.with_fitness(f))
                .expect("valid individual")
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let trials = 100_000;
    let candidates = individuals(&[0.9, 0.8, 0.1]);
    let mut rng = RunRng::from_seed(11);
    let mut first_hits = 0;
    for _ in 0..trials {
        let picked = survival_select(candidates.clone(), 1, 0.1, &mut rng).map_err(|e| e.to_string())?;
        first_hits += usize::from(picked[0].id == IndividualId(0));
    }
    let expected = 9f64.exp() / (9f64.exp() + 8f64.exp() + 1f64.exp());
    let freq = first_hits as f64 / trials as f64;
    check((freq - expected).abs() < 0.01, format!("survival frequency {freq:.4}, expected {expected:.4}"))?;

    let roulette = individuals(&[0.7, 0.2, 0.1]);
    let sel = select_parent_pairs(&roulette, trials / 2, &mut rng).map_err(|e| e.to_string())?;
    let zeros = sel.raw_draws.iter().filter(|&&i| i == 0).count();
    let rfreq = zeros as f64 / sel.raw_draws.len() as f64;
    check((rfreq - 0.7).abs() < 0.02, format!("roulette frequency {rfreq:.4}, expected 0.70"))?;

    let elapsed = started.elapsed();
    check(elapsed < Duration::from_secs(10), format!("took {elapsed:?}"))?;
    Ok(format!("survival {freq:.4} vs {expected:.4}, roulette {rfreq:.4}, {elapsed:.2?}"))
}

fn criterion_2() -> Outcome {
    let mut rng = StdRng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let len = rng.random_range(1..12);
        let scores: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..1.0)).collect();
        let shift = rng.random_range(-10.0..10.0);
        let temperature = rng.random_range(0.05..2.0);
        let scale = rng.random_range(0.01..100.0);

        let base = tempered_softmax(&scores, temperature).map_err(|e| e.to_string())?;
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let moved = tempered_softmax(&shifted, temperature).map_err(|e| e.to_string())?;

        let weights = normalize_weights(&scores).map_err(|e| e.to_string())?;
        let scaled: Vec<f64> = scores.iter().map(|s| s * scale).collect();
        let rescaled = normalize_weights(&scaled).map_err(|e| e.to_string())?;

        for (a, b) in base.iter().zip(&moved).chain(weights.iter().zip(&rescaled)) {
            worst = worst.max((a - b).abs());
        }
    }
    check(worst <= 1e-12, format!("max deviation {worst:e}"))?;
    Ok(format!("1000 vectors, max deviation {worst:.1e}"))
}

fn criterion_3() -> Outcome {
    let p = |l: &str| Prediction::Label(l.into());
    let golds: Vec<String> = ["A", "A", "B", "B"].iter().map(|s| s.to_string()).collect();
    let f1 = macro_f1(&[p("A"), p("B"), p("B"), p("B")], &golds, &["A", "B"]).map_err(|e| e.to_string())?;
    check((f1 - 0.73333).abs() < 1e-5, format!("macro F1 {f1}"))?;

    let params = MeteorParams::default();
    let m = meteor_sentence("the cat sat", "the cat sat", &params);
    check((m - 0.98148).abs() < 1e-5, format!("meteor identical {m}"))?;
    let single = meteor_sentence("dog", "dog", &params);
    check(single == 0.5, format!("meteor single token {single}"))?;

    let mut rng = StdRng::seed_from_u64(3);
    let vocab = ["the", "cat", "cats", "sat", "sitting", "on", "mat", "a", "dog", "runs", "running", ",", "."];
    let sentence = |rng: &mut StdRng| {
        let n = rng.random_range(0..10);
        (0..n).map(|_| vocab[rng.random_range(0..vocab.len())]).collect::<Vec<_>>().join(" ")
    };
    for _ in 0..10_000 {
        let (h, r) = (sentence(&mut rng), sentence(&mut rng));
        let s = meteor_sentence(&h, &r, &params);
        check((0.0..=1.0).contains(&s), format!("meteor({h:?}, {r:?}) = {s}"))?;
    }
    Ok(format!("F1 {f1:.5}, METEOR {m:.5} / {single}, 10000 random pairs bounded"))
}

/// Scripted LLM whose every answer is a hash of the salt and the request.
fn hashed_backend(salt: u64) -> Arc<dyn reflective_core::gateway::Backend> {
    let h = move |parts: &[&str]| sha256_hex(format!("{salt}|{}", parts.join("|")).as_bytes());
    let task = move |req: &reflective_core::gateway::CompletionRequest| {
        let digest = h(&[req.system_text().unwrap_or(""), req.last_user_text().unwrap_or("")]);
        match u8::from_str_radix(&digest[..2], 16).unwrap_or(0) % 3 {
            0 => "positive".to_string(),
            1 => "negative".to_string(),
            _ => "no idea".to_string(),
        }
    };
    let paraphrase = move |req: &reflective_core::gateway::CompletionRequest| {
        let text = req.last_user_text().unwrap_or("");
        let n: usize = text
            .split("exactly ")
            .nth(1)
            .and_then(|r| r.split_whitespace().next())
            .and_then(|n| n.parse().ok())
            .unwrap_or(1);
        let list: Vec<String> = (0..n).map(|i| format!("Variant {} of the task.", &h(&[&i.to_string()])[..10])).collect();
        serde_json::to_string(&list).expect("strings serialize")
    };
    let rewrite = move |req: &reflective_core::gateway::CompletionRequest| {
        format!("<prompt>Label it, style {}.</prompt>", &h(&[req.last_user_text().unwrap_or("")])[..6])
    };
    let hint = move |req: &reflective_core::gateway::CompletionRequest| {
        format!("Hint {}.", &h(&[req.last_user_text().unwrap_or("")])[..8])
    };
    let rules = vec![
        MockRule::new(Matcher::Purpose(Purpose::TaskInference), Responder::custom(task)),
        MockRule::new(Matcher::Purpose(Purpose::Paraphrase), Responder::custom(paraphrase)),
        MockRule::new(Matcher::Purpose(Purpose::Crossover), Responder::custom(rewrite)),
        MockRule::new(Matcher::Purpose(Purpose::Mutate), Responder::custom(rewrite)),
        MockRule::new(Matcher::Any, Responder::custom(hint)),
    ];
    Arc::new(mock_program(rules).expect("rules end in a catch-all"))
}

fn criterion_4() -> Outcome {
    let task = demo::task();
    let fitness = demo::fitness_samples();
    let templates = OperatorTemplates::builtin();
    let setup = RunSetup::new(&task, &fitness, &templates);
    let mut rng = StdRng::seed_from_u64(4);
    for trial in 0..50 {
        let config = EvolutionConfig {
            population_size: 6,
            epochs: 8,
            rng_seed: rng.random(),
            eval_subsample_size: 20,
            ..EvolutionConfig::default()
        };
        let gateway = Gateway::new(hashed_backend(rng.random()), config.max_llm_calls);
        let mut sizes = Vec::new();
        let report = run_with(demo::SEED_PROMPT, RunMode::Reflective, &setup, &config, &gateway, &mut |s: &RunState| {
            if s.history.last().is_some_and(|r| r.completed) {
                sizes.push(s.population.individuals.len());
            }
            Ok(())
        })
        .map_err(|f| format!("trial {trial}: {}", f.error))?;
        check(report.status == RunStatus::Completed, format!("trial {trial}: {:?}", report.status))?;
        check(sizes.len() == 8 && sizes.iter().all(|&n| n == 6), format!("trial {trial}: sizes {sizes:?}"))?;
        let best: Vec<f64> = report
            .history
            .iter()
            .map(|r| r.best_fitness.ok_or(format!("trial {trial}: epoch {} has no best fitness", r.epoch)))
            .collect::<Result<_, _>>()?;
        check(best.windows(2).all(|w| w[1] >= w[0]), format!("trial {trial}: best history {best:?}"))?;
    }
    Ok("50 randomized runs: best never decreases, population stays at 6".into())
}

/// F1 over two labels, counted by hand; unclear answers are wrong for everyone.
fn oracle_f1(prompt: &str, samples: &[EvalSample]) -> f64 {
    let labels = ["positive", "negative"];
    let mut total = 0.0;
    for label in labels {
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for (i, s) in samples.iter().enumerate() {
            let answer = demo::task_answer(prompt, &s.target, i % demo::DIFFICULTY_LEVELS);
            let said = labels.iter().find(|l| answer.contains(*l)).copied();
            match (said == Some(label), s.target == label) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                _ => {}
            }
        }
        if tp + fp + fn_ > 0.0 {
            total += 2.0 * tp / (2.0 * tp + fp + fn_);
        }
    }
    total / labels.len() as f64
}

/// Every prompt the plain GA could ever produce from the seed and the
/// paraphrase pool: closure under splice and the mutation cycle.
fn baseline_reachable() -> BTreeSet<String> {
    let mut seen: BTreeSet<String> = std::iter::once(demo::SEED_PROMPT)
        .chain(demo::PARAPHRASE_POOL)
        .map(str::to_string)
        .collect();
    loop {
        let current: Vec<String> = seen.iter().cloned().collect();
        let mut fresh = Vec::new();
        for a in &current {
            fresh.push(demo::cycle_mutation(a));
            for b in &current {
                let child = demo::splice(a, b);
                fresh.push(demo::cycle_mutation(&child));
                fresh.push(child);
            }
        }
        let before = seen.len();
        seen.extend(fresh);
        if seen.len() == before {
            return seen;
        }
    }
}

fn criterion_5() -> Outcome {
    let started = Instant::now();
    let task = demo::task();
    let fitness = demo::fitness_samples();
    let templates = OperatorTemplates::builtin();
    let setup = RunSetup::new(&task, &fitness, &templates);
    let config = demo::config();

    let reflective = engine::run(demo::SEED_PROMPT, &setup, &config, &Gateway::new(Arc::new(demo::backend()), config.max_llm_calls))
        .map_err(|f| f.error.to_string())?;
    let hit = reflective.history.iter().find(|r| r.best_fitness.is_some_and(|f| f >= 1.0)).map(|r| r.epoch);
    check(hit.is_some_and(|e| e <= 3), format!("reflective reached 1.0 at epoch {hit:?}"))?;

    let baseline_config = EvolutionConfig {
        epochs: 10,
        max_llm_calls: 20_000,
        ..config.clone()
    };
    let baseline = engine::run_baseline_ga(
        demo::SEED_PROMPT,
        &setup,
        &baseline_config,
        &Gateway::new(Arc::new(demo::backend()), baseline_config.max_llm_calls),
    )
    .map_err(|f| f.error.to_string())?;
    let baseline_best = baseline.best_fitness.ok_or("baseline has no best fitness")?;
    check(baseline.epochs_completed == 10, format!("baseline ran {} epochs", baseline.epochs_completed))?;
    check(baseline_best < 1.0, format!("baseline reached {baseline_best}"))?;

    let reachable = baseline_reachable();
    check(reachable.iter().all(|p| !demo::is_optimal(p)), "an optimal prompt is reachable without hints")?;
    let ceiling = reachable.iter().map(|p| oracle_f1(p, &fitness)).fold(0.0, f64::max);
    check(ceiling < 1.0, format!("brute-force ceiling {ceiling}"))?;
    check(baseline_best <= ceiling + 1e-12, format!("baseline {baseline_best} above ceiling {ceiling}"))?;
    check(oracle_f1(demo::OPTIMAL_PROMPT, &fitness) == 1.0, "optimal prompt does not score 1")?;

    let elapsed = started.elapsed();
    check(elapsed < Duration::from_secs(60), format!("took {elapsed:?}"))?;
    Ok(format!(
        "reflective hit 1.0 at epoch {}, baseline best {:.3} (ceiling {ceiling:.3} over {} reachable prompts), {elapsed:.2?}",
        hit.unwrap_or_default(),
        baseline_best,
        reachable.len()
    ))
}

fn cli(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_reflective-prompt"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn criterion_6() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    for name in ["a", "b"] {
        let out = cli(&["demo", "--out", name], tmp.path());
        check(out.status.code() == Some(0), format!("demo run {name} exited {:?}", out.status.code()))?;
    }
    let read = |p: &str| std::fs::read(tmp.path().join(p)).map_err(|e| e.to_string());
    check(read("a/report.json")? == read("b/report.json")?, "CLI reports differ")?;
    check(read("a/calls.jsonl")?.len() == read("b/calls.jsonl")?.len(), "call logs differ in size")?;

    let task = demo::task();
    let fitness = demo::fitness_samples();
    let holdout = demo::holdout_samples();
    let templates = OperatorTemplates::builtin();
    let setup = RunSetup::new(&task, &fitness, &templates).with_holdout(&holdout);
    let config = demo::config();
    let gateway = || Gateway::new(Arc::new(demo::backend()), config.max_llm_calls);

    let checkpoint = tmp.path().join("epoch2.json");
    let full = run_with(demo::SEED_PROMPT, RunMode::Reflective, &setup, &config, &gateway(), &mut |s: &RunState| {
        if s.epoch == 2 {
            save_checkpoint(s, &checkpoint).map_err(|e| e.to_string())?;
        }
        Ok(())
    })
    .map_err(|f| f.error.to_string())?;
    let state: RunState = load_checkpoint(&checkpoint).map_err(|e| e.to_string())?;
    let resumed = engine::resume(state, &setup, &gateway(), &mut |_| Ok(())).map_err(|f| f.error.to_string())?;
    check(full.to_json() == resumed.to_json(), "resumed report differs from the uninterrupted run")?;

    let cli_report: RunReport = serde_json::from_slice(&read("a/report.json")?).map_err(|e| e.to_string())?;
    check(cli_report.best_prompt == full.best_prompt, "CLI and library disagree on the best prompt")?;
    Ok("repeat CLI runs byte-identical; epoch-2 checkpoint resume matches".into())
}

const PREAMBLE: &str =
    "You are an expert in the domain of optimization prompts. Your task is to give hints to design better prompts.";
const HINT_SUFFIX: &str = "For example, you can try to recommend word replacements, active/positive voice conversions, adding words, or deleting words.";

fn criterion_7() -> Outcome {
    let task = demo::task();
    let fitness = demo::fitness_samples();
    let templates = OperatorTemplates::builtin();
    let setup = RunSetup::new(&task, &fitness, &templates);
    let config = demo::config();
    let gateway = Gateway::new(Arc::new(demo::backend()), config.max_llm_calls).with_capture();
    engine::run(demo::SEED_PROMPT, &setup, &config, &gateway).map_err(|f| f.error.to_string())?;
    let mut checked = 0;
    for call in gateway.captured() {
        let req = &call.request;
        if !matches!(req.purpose, Purpose::ReflectShort | Purpose::ReflectLong) {
            continue;
        }
        let first = req.messages.first().map(|m| m.content.as_str());
        check(first == Some(PREAMBLE), format!("system message {first:?}"))?;
        let last = req.last_user_text().unwrap_or("");
        check(last.ends_with(HINT_SUFFIX), format!("user message ends {:?}", &last[last.len().saturating_sub(60)..]))?;
        checked += 1;
    }
    check(checked > 0, "no reflection calls captured")?;
    Ok(format!("{checked} reflection requests carry the fixed preamble and suffix"))
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut seen = Vec::new();
    for budget in [0u64, 1, 5, 50] {
        let cfg = tmp.path().join(format!("c{budget}.json"));
        std::fs::write(&cfg, format!(r#"{{"population_size": 6, "epochs": 5, "max_llm_calls": {budget}}}"#))
            .map_err(|e| e.to_string())?;
        let out_dir = format!("run{budget}");
        let out = cli(&["optimize", cfg.to_str().unwrap_or_default(), "--mock", "--out", &out_dir], tmp.path());
        check(out.status.code() == Some(2), format!("budget {budget}: exit {:?}", out.status.code()))?;
        let dir = tmp.path().join(&out_dir);
        let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("report.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        check(report["status"] == "budget_exhausted", format!("budget {budget}: status {}", report["status"]))?;
        let total = report["total_calls"].as_u64().unwrap_or(u64::MAX);
        check(total <= budget, format!("budget {budget}: {total} calls"))?;
        let lines = std::fs::read_to_string(dir.join("calls.jsonl")).unwrap_or_default().lines().count() as u64;
        check(lines <= budget, format!("budget {budget}: {lines} logged calls"))?;
        seen.push(format!("{budget}:{total}"));
    }
    Ok(format!("exit 2 with calls within budget ({})", seen.join(", ")))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("selection frequencies", criterion_1),
        ("selection invariances", criterion_2),
        ("metric values and bounds", criterion_3),
        ("elitism and population size", criterion_4),
        ("reflection beats plain GA on demo", criterion_5),
        ("determinism and resume", criterion_6),
        ("fixed reflection text", criterion_7),
        ("call budget enforcement", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("criterion {}: PASS {name} - {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name} - {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
