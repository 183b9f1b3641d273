//! Offline demo: a small sentiment task and a scripted mock LLM.
//!
//! The mock task model answers a sample correctly when the prompt carries
//! enough of a few helpful words; a prompt asking for a one-word answer gets
//! everything right. Only a reflection hint ever mentions the one-word
//! instruction, and only a hint-conditioned crossover turns it into a prompt,
//! so the plain GA can't reach a perfect score.

use std::collections::HashMap;
use std::sync::Arc;

use crate::config::EvolutionConfig;
use crate::data::parse_dataset;
use crate::eval::EvalSample;
use crate::gateway::mock::request_tag;
use crate::gateway::{mock_program, CompletionRequest, Matcher, MockBackend, MockRule, Purpose, Responder};
use crate::types::TaskSpec;

pub const TASK_JSON: &str = include_str!("../demo/task.json");
pub const CONFIG_JSON: &str = include_str!("../demo/config.json");
pub const FITNESS_JSONL: &str = include_str!("../demo/sentiment_fitness.jsonl");
pub const HOLDOUT_JSONL: &str = include_str!("../demo/sentiment_holdout.jsonl");

pub const SEED_PROMPT: &str = "Classify the sentiment of the text.";
/// Phrase that unlocks a perfect score.
pub const HINT_MARKER: &str = "answer with one word";
pub const OPTIMAL_PROMPT: &str =
    "Read the review carefully and answer with one word: positive or negative.";
/// Each one present in a prompt lets the mock solve one more difficulty level.
pub const FEATURES: [&str; 4] = ["sentiment", "review", "carefully", "precise"];
pub const DIFFICULTY_LEVELS: usize = 5;

pub const PARAPHRASE_POOL: [&str; 10] = [
    "Determine whether the review is positive or negative.",
    "Label the text as positive or negative.",
    "Decide if the sentiment of this review is positive or negative.",
    "Read the text and state its overall sentiment.",
    "Judge the emotional tone of the passage.",
    "What is the sentiment of this movie review?",
    "Tell whether the writer liked the film.",
    "Classify the review.",
    "Give the polarity of the text.",
    "Say how the author feels about the movie.",
];

const SHORT_HINT: &str =
    "Tell the model to answer with one word so the label can be read off directly.";
const UNSURE: &str = "I am not sure.";
const PRECISE: &str = "Be precise.";
const CAREFUL: &str = "Read carefully.";

pub fn task() -> TaskSpec {
    serde_json::from_str(TASK_JSON).expect("bundled task parses")
}

pub fn config() -> EvolutionConfig {
    serde_json::from_str(CONFIG_JSON).expect("bundled config parses")
}

pub fn fitness_samples() -> Vec<EvalSample> {
    parse_dataset(FITNESS_JSONL).expect("bundled data parses")
}

pub fn holdout_samples() -> Vec<EvalSample> {
    parse_dataset(HOLDOUT_JSONL).expect("bundled data parses")
}

/// Difficulty is the sample's position in its file modulo the level count.
fn difficulty_table() -> HashMap<String, (String, usize)> {
    let mut table = HashMap::new();
    for split in [fitness_samples(), holdout_samples()] {
        for (i, s) in split.into_iter().enumerate() {
            table.insert(s.input, (s.target, i % DIFFICULTY_LEVELS));
        }
    }
    table
}

pub fn feature_count(prompt: &str) -> usize {
    let lower = prompt.to_lowercase();
    FEATURES.iter().filter(|f| lower.contains(*f)).count()
}

pub fn is_optimal(prompt: &str) -> bool {
    prompt.to_lowercase().contains(HINT_MARKER)
}

/// What the mock task model says for `prompt` on a sample of known gold
/// label and difficulty.
pub fn task_answer(prompt: &str, gold: &str, difficulty: usize) -> String {
    if is_optimal(prompt) || difficulty < feature_count(prompt) {
        format!("The sentiment is {gold}.")
    } else {
        UNSURE.to_string()
    }
}

/// Splits on sentence-ending periods; the period stays with its sentence.
pub fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        current.push(c);
        if matches!(c, '.' | '?' | '!') {
            out.push(current.trim().to_string());
            current.clear();
        }
    }
    if !current.trim().is_empty() {
        out.push(current.trim().to_string());
    }
    out
}

/// Hint-free crossover: first sentence of `a` followed by the last of `b`.
pub fn splice(a: &str, b: &str) -> String {
    let first = sentences(a).into_iter().next().unwrap_or_default();
    let last = sentences(b).pop().unwrap_or_default();
    if first == last {
        first
    } else {
        format!("{first} {last}")
    }
}

/// Mutation cycle: append "Be precise." → swap it for "Read carefully." → drop it.
pub fn cycle_mutation(text: &str) -> String {
    let text = text.trim();
    if let Some(rest) = text.strip_suffix(PRECISE) {
        format!("{} {CAREFUL}", rest.trim()).trim().to_string()
    } else if let Some(rest) = text.strip_suffix(CAREFUL) {
        let rest = rest.trim();
        if rest.is_empty() {
            CAREFUL.to_string()
        } else {
            rest.to_string()
        }
    } else {
        format!("{text} {PRECISE}")
    }
}

fn requested_count(request: &CompletionRequest) -> usize {
    let text = request.last_user_text().unwrap_or("");
    text.split("exactly ")
        .nth(1)
        .and_then(|rest| rest.split_whitespace().next())
        .and_then(|n| n.parse().ok())
        .unwrap_or(1)
}

fn paraphrases(request: &CompletionRequest) -> String {
    let n = requested_count(request);
    let list: Vec<&str> = (0..n).map(|i| PARAPHRASE_POOL[i % PARAPHRASE_POOL.len()]).collect();
    serde_json::to_string(&list).expect("strings serialize")
}

fn wrap(prompt: String) -> String {
    format!("<prompt>{prompt}</prompt>")
}

/// Mock backend driving the demo landscape.
pub fn backend() -> MockBackend {
    let table = Arc::new(difficulty_table());
    let task_rule = MockRule::new(
        Matcher::Purpose(Purpose::TaskInference),
        Responder::custom(move |req| {
            let prompt = req.system_text().unwrap_or("");
            let user = req.last_user_text().unwrap_or("");
            let input = user.split("\n\n").next().unwrap_or("").trim();
            match table.get(input) {
                Some((gold, difficulty)) => task_answer(prompt, gold, *difficulty),
                None => UNSURE.to_string(),
            }
        }),
    );
    let rules = vec![
        task_rule,
        MockRule::new(Matcher::Purpose(Purpose::Paraphrase), Responder::custom(paraphrases)),
        MockRule::new(Matcher::Purpose(Purpose::ReflectShort), Responder::Fixed(SHORT_HINT.into())),
        MockRule::new(
            Matcher::Purpose(Purpose::ReflectLong),
            Responder::custom(|req| request_tag(req, "new_hints").unwrap_or(SHORT_HINT).to_string()),
        ),
        MockRule::new(
            Matcher::Purpose(Purpose::Crossover),
            Responder::custom(|req| {
                let hinted = request_tag(req, "hint").is_some_and(is_optimal);
                if hinted {
                    return wrap(OPTIMAL_PROMPT.to_string());
                }
                let a = request_tag(req, "better_prompt").or_else(|| request_tag(req, "first_prompt"));
                let b = request_tag(req, "worse_prompt").or_else(|| request_tag(req, "second_prompt"));
                wrap(splice(a.unwrap_or(""), b.unwrap_or("")))
            }),
        ),
        MockRule::new(
            Matcher::Purpose(Purpose::Mutate),
            Responder::custom(|req| {
                let current = request_tag(req, "elite_prompt")
                    .or_else(|| request_tag(req, "current_prompt"))
                    .unwrap_or(SEED_PROMPT);
                wrap(cycle_mutation(current))
            }),
        ),
        MockRule::new(Matcher::Any, Responder::Fixed(UNSURE.into())),
    ];
    mock_program(rules).expect("demo rules end in a catch-all")
}
