//! LLM-mediated variation operators.
//!
//! Every request opens with the fixed system preamble and carries the task
//! description. Short-term reflection contrasts one parent pair and its hint
//! steers that pair's crossover; long-term reflection folds a generation's
//! hints into the run memory, which steers elitist mutation of the best-so-far
//! prompt. The baseline operators are the same calls without any hint.

pub mod templates;

use thiserror::Error;

use crate::gateway::{ChatMessage, CompletionRequest, Gateway, GatewayError, Purpose};
use crate::types::{
    IndividualId, LongTermMemory, Origin, ParentPair, PromptIndividual, ShortTermReflection, TaskSpec,
};

pub use templates::{OperatorTemplates, TemplateError, HINT_SUFFIX, SYSTEM_PREAMBLE};

/// Extra attempts after an empty reply.
const EMPTY_REPROMPTS: u32 = 2;
/// Total attempts at getting a parseable paraphrase list.
const PARAPHRASE_PARSE_ATTEMPTS: u32 = 3;
/// Re-requests when a paraphrase repeats the seed.
const PARAPHRASE_DUPLICATE_RETRIES: u32 = 2;

#[derive(Debug, Error, PartialEq)]
pub enum OperatorError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("could not parse a JSON list of paraphrases after {attempts} attempts; last reply: {raw:?}")]
    Unparseable { attempts: u32, raw: String },
    #[error("empty {purpose} output after {attempts} attempts")]
    EmptyOutput { purpose: Purpose, attempts: u32 },
    #[error("precondition failed: {0}")]
    Precondition(String),
}

impl OperatorError {
    pub fn is_budget(&self) -> bool {
        matches!(self, OperatorError::Gateway(e) if e.is_budget())
    }
}

/// Everything an operator needs besides its own inputs.
#[derive(Clone, Copy)]
pub struct OperatorContext<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a OperatorTemplates,
    pub task: &'a TaskSpec,
    pub temperature: f64,
    pub max_tokens: u32,
}

/// Outcome of a long-term reflection. Failures other than budget exhaustion
/// leave the memory as it was and report a warning instead of an error.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryUpdate {
    pub memory: LongTermMemory,
    pub warning: Option<String>,
}

fn score(f: Option<f64>) -> String {
    f.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into())
}

/// Inner text of a `<prompt>` block if the reply has one, else the whole reply.
pub fn extract_prompt(raw: &str) -> String {
    crate::gateway::mock::extract_tag(raw, "prompt")
        .unwrap_or(raw)
        .trim()
        .to_string()
}

fn same_text(a: &str, b: &str) -> bool {
    a.split_whitespace().eq(b.split_whitespace())
}

impl<'a> OperatorContext<'a> {
    fn request(&self, purpose: Purpose, user: String) -> CompletionRequest {
        CompletionRequest {
            messages: vec![
                ChatMessage::system(self.templates.system_preamble()),
                ChatMessage::user(user),
            ],
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            purpose,
        }
    }

    fn reflection_request(&self, purpose: Purpose, body: String) -> CompletionRequest {
        self.request(purpose, format!("{body}\n\n{}", self.templates.hint_suffix()))
    }

    /// Sends `request`, re-sending it unchanged when the reply is empty.
    fn complete_non_empty(
        &self,
        request: &CompletionRequest,
        clean: impl Fn(&str) -> String,
    ) -> Result<String, OperatorError> {
        let attempts = 1 + EMPTY_REPROMPTS;
        for _ in 0..attempts {
            match self.gateway.complete(request) {
                Ok(resp) => {
                    let text = clean(&resp.text);
                    if !text.trim().is_empty() {
                        return Ok(text);
                    }
                }
                Err(GatewayError::MalformedOutput { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }
        Err(OperatorError::EmptyOutput {
            purpose: request.purpose,
            attempts,
        })
    }

    fn memory_block(&self, section: &str, memory: Option<&LongTermMemory>) -> String {
        match memory {
            Some(m) if !m.memory_text.trim().is_empty() => format!(
                "\n{}\n",
                self.templates
                    .render(section, &[("long_term_memory", m.memory_text.as_str())])
            ),
            _ => String::new(),
        }
    }
}

fn parse_paraphrases(raw: &str, n: usize) -> Option<Vec<String>> {
    let start = raw.find('[')?;
    let end = raw.rfind(']')?;
    if end < start {
        return None;
    }
    let list: Vec<String> = serde_json::from_str(&raw[start..=end]).ok()?;
    let list: Vec<String> = list.into_iter().map(|s| s.trim().to_string()).collect();
    if list.len() < n || list.iter().take(n).any(|s| s.is_empty()) {
        return None;
    }
    Some(list.into_iter().take(n).collect())
}

/// Asks for `n` rewrites of `seed` as a JSON array. The seed itself is not returned.
pub fn paraphrase_seed(ctx: &OperatorContext<'_>, seed: &str, n: usize) -> Result<Vec<String>, OperatorError> {
    if n == 0 {
        return Err(OperatorError::Precondition("paraphrase count must be at least 1".into()));
    }
    if seed.trim().is_empty() {
        return Err(OperatorError::Precondition("seed prompt is empty".into()));
    }
    let n_text = n.to_string();
    let body = ctx.templates.render(
        "paraphrase",
        &[
            ("task_description", ctx.task.description.as_str()),
            ("seed_prompt", seed),
            ("n_paraphrases", n_text.as_str()),
        ],
    );
    let mut request = ctx.request(Purpose::Paraphrase, body);
    let mut parse_failures = 0;
    let mut duplicate_retries = 0;
    loop {
        let raw = match ctx.gateway.complete(&request) {
            Ok(resp) => resp.text,
            Err(GatewayError::MalformedOutput { .. }) => String::new(),
            Err(e) => return Err(e.into()),
        };
        match parse_paraphrases(&raw, n) {
            None => {
                parse_failures += 1;
                if parse_failures >= PARAPHRASE_PARSE_ATTEMPTS {
                    return Err(OperatorError::Unparseable {
                        attempts: parse_failures,
                        raw,
                    });
                }
                if !raw.trim().is_empty() {
                    request.messages.push(ChatMessage::assistant(raw));
                }
                request.messages.push(ChatMessage::user(format!(
                    "That reply was not a JSON array of {n} non-empty strings. Reply with the JSON array only."
                )));
            }
            Some(list) => {
                let repeats_seed = list.iter().any(|p| same_text(p, seed));
                if repeats_seed && duplicate_retries < PARAPHRASE_DUPLICATE_RETRIES {
                    duplicate_retries += 1;
                    request.messages.push(ChatMessage::assistant(raw));
                    request.messages.push(ChatMessage::user(
                        "Some rewrites repeat the original prompt word for word. Make every rewrite differ from it. Reply with the JSON array only.",
                    ));
                    continue;
                }
                return Ok(list);
            }
        }
    }
}

/// Contrasts a better and a worse parent and returns the LLM's hint.
pub fn short_term_reflect(
    ctx: &OperatorContext<'_>,
    pair: &ParentPair,
    epoch: u32,
) -> Result<ShortTermReflection, OperatorError> {
    pair.validate()
        .map_err(|e| OperatorError::Precondition(e.to_string()))?;
    let (better_score, worse_score) = (score(pair.better.fitness), score(pair.worse.fitness));
    let body = ctx.templates.render(
        "reflect_short",
        &[
            ("task_description", ctx.task.description.as_str()),
            ("better_prompt", pair.better.text.as_str()),
            ("better_score", better_score.as_str()),
            ("worse_prompt", pair.worse.text.as_str()),
            ("worse_score", worse_score.as_str()),
        ],
    );
    let request = ctx.reflection_request(Purpose::ReflectShort, body);
    let hint = ctx.complete_non_empty(&request, |t| t.trim().to_string())?;
    Ok(ShortTermReflection {
        hint_text: hint,
        pair_ids: pair.ids(),
        epoch,
    })
}

fn truncate_chars(text: &str, cap: usize) -> String {
    text.chars().take(cap).collect()
}

/// Folds this generation's hints into the run memory.
pub fn long_term_reflect(
    ctx: &OperatorContext<'_>,
    memory: &LongTermMemory,
    new_hints: &[ShortTermReflection],
    epoch: u32,
    char_cap: usize,
) -> Result<MemoryUpdate, OperatorError> {
    if new_hints.is_empty() {
        return Ok(MemoryUpdate {
            memory: LongTermMemory {
                last_updated_epoch: epoch,
                ..memory.clone()
            },
            warning: None,
        });
    }
    let hints = new_hints
        .iter()
        .map(|h| format!("- {}", h.hint_text.trim()))
        .collect::<Vec<_>>()
        .join("\n");
    let previous = if memory.memory_text.trim().is_empty() {
        "(none yet)"
    } else {
        memory.memory_text.as_str()
    };
    let body = ctx.templates.render(
        "reflect_long",
        &[
            ("task_description", ctx.task.description.as_str()),
            ("long_term_memory", previous),
            ("short_term_hints", hints.as_str()),
        ],
    );
    let request = ctx.reflection_request(Purpose::ReflectLong, body);
    let unchanged = |warning: String| {
        tracing::warn!("{warning}");
        MemoryUpdate {
            memory: memory.clone(),
            warning: Some(warning),
        }
    };
    let mut text = match ctx.complete_non_empty(&request, |t| t.trim().to_string()) {
        Ok(t) => t,
        Err(e) if e.is_budget() => return Err(e),
        Err(e) => return Ok(unchanged(format!("long-term reflection failed: {e}"))),
    };
    let mut warning = None;
    if text.chars().count() > char_cap {
        let cap_text = char_cap.to_string();
        let body = ctx.templates.render(
            "memory_summarize",
            &[
                ("task_description", ctx.task.description.as_str()),
                ("long_term_memory", text.as_str()),
                ("memory_char_cap", cap_text.as_str()),
            ],
        );
        let request = ctx.reflection_request(Purpose::ReflectLong, body);
        match ctx.complete_non_empty(&request, |t| t.trim().to_string()) {
            Ok(summary) => text = summary,
            Err(e) if e.is_budget() => return Err(e),
            Err(e) => warning = Some(format!("memory summarization failed, truncating: {e}")),
        }
        if text.chars().count() > char_cap {
            text = truncate_chars(&text, char_cap);
        }
    }
    Ok(MemoryUpdate {
        memory: LongTermMemory {
            memory_text: text,
            last_updated_epoch: epoch,
            update_count: memory.update_count + 1,
        },
        warning,
    })
}

/// Recombines a parent pair under that pair's short-term hint.
pub fn crossover(
    ctx: &OperatorContext<'_>,
    pair: &ParentPair,
    hint: &ShortTermReflection,
    memory: Option<&LongTermMemory>,
    id: IndividualId,
    epoch: u32,
) -> Result<PromptIndividual, OperatorError> {
    if hint.pair_ids != pair.ids() {
        return Err(OperatorError::Precondition(format!(
            "hint was produced for pair {:?}, not {:?}",
            hint.pair_ids,
            pair.ids()
        )));
    }
    pair.validate()
        .map_err(|e| OperatorError::Precondition(e.to_string()))?;
    let (better_score, worse_score) = (score(pair.better.fitness), score(pair.worse.fitness));
    let memory_block = ctx.memory_block("crossover_memory_block", memory);
    let body = ctx.templates.render(
        "crossover",
        &[
            ("task_description", ctx.task.description.as_str()),
            ("better_prompt", pair.better.text.as_str()),
            ("better_score", better_score.as_str()),
            ("worse_prompt", pair.worse.text.as_str()),
            ("worse_score", worse_score.as_str()),
            ("short_term_hint", hint.hint_text.as_str()),
            ("memory_block", memory_block.as_str()),
        ],
    );
    let request = ctx.request(Purpose::Crossover, body);
    let text = ctx.complete_non_empty(&request, extract_prompt)?;
    offspring(
        id,
        text,
        Origin::Crossover,
        &[&pair.better, &pair.worse],
        epoch,
    )
}

/// Rewrites the elite prompt guided by the long-term memory.
pub fn elitist_mutation(
    ctx: &OperatorContext<'_>,
    elite: &PromptIndividual,
    memory: &LongTermMemory,
    id: IndividualId,
    epoch: u32,
) -> Result<PromptIndividual, OperatorError> {
    if elite.fitness.is_none() {
        return Err(OperatorError::Precondition("elite has no fitness".into()));
    }
    let elite_score = score(elite.fitness);
    let memory_block = ctx.memory_block("mutate_memory_block", Some(memory));
    let body = ctx.templates.render(
        "mutate",
        &[
            ("task_description", ctx.task.description.as_str()),
            ("elite_prompt", elite.text.as_str()),
            ("elite_score", elite_score.as_str()),
            ("memory_block", memory_block.as_str()),
        ],
    );
    let request = ctx.request(Purpose::Mutate, body);
    let text = ctx.complete_non_empty(&request, extract_prompt)?;
    offspring(id, text, Origin::ElitistMutation, &[elite], epoch)
}

/// Plain GA offspring: hint-free crossover followed by a generic mutation.
pub fn baseline_offspring(
    ctx: &OperatorContext<'_>,
    pair: &ParentPair,
    id: IndividualId,
    epoch: u32,
) -> Result<PromptIndividual, OperatorError> {
    let body = ctx.templates.render(
        "baseline_crossover",
        &[
            ("task_description", ctx.task.description.as_str()),
            ("first_prompt", pair.better.text.as_str()),
            ("second_prompt", pair.worse.text.as_str()),
        ],
    );
    let child = ctx.complete_non_empty(&ctx.request(Purpose::Crossover, body), extract_prompt)?;
    let body = ctx.templates.render(
        "baseline_mutate",
        &[
            ("task_description", ctx.task.description.as_str()),
            ("current_prompt", child.as_str()),
        ],
    );
    let text = ctx.complete_non_empty(&ctx.request(Purpose::Mutate, body), extract_prompt)?;
    offspring(id, text, Origin::BaselineOp, &[&pair.better, &pair.worse], epoch)
}

fn offspring(
    id: IndividualId,
    text: String,
    origin: Origin,
    parents: &[&PromptIndividual],
    epoch: u32,
) -> Result<PromptIndividual, OperatorError> {
    let duplicate = parents.iter().any(|p| same_text(&p.text, &text));
    let mut child = PromptIndividual::new(id, text, origin, parents.iter().map(|p| p.id).collect(), epoch)
        .map_err(|e| OperatorError::Precondition(e.to_string()))?;
    child.duplicate_of_parent = duplicate;
    Ok(child)
}
