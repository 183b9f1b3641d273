//! Operator prompt templates.
//!
//! Templates live in one UTF-8 text file split into sections by header lines
//! of the form `[section_name]`. A file only needs the sections it overrides;
//! everything else falls back to [`DEFAULT_TEMPLATES`]. The system preamble
//! and the reflection hint suffix are fixed strings: a file may repeat them,
//! but may not change them.

use std::collections::BTreeMap;

use thiserror::Error;

/// First message of every operator request.
pub const SYSTEM_PREAMBLE: &str = "You are an expert in the domain of optimization prompts. Your task is to give hints to design better prompts.";

/// Closing sentence of both reflection requests.
pub const HINT_SUFFIX: &str = "For example, you can try to recommend word replacements, active/positive voice conversions, adding words, or deleting words.";

pub const DEFAULT_TEMPLATES: &str = include_str!("default_templates.txt");

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("unknown template section [{0}]")]
    UnknownSection(String),
    #[error("template section [{0}] appears twice")]
    DuplicateSection(String),
    #[error("text before the first section header on line {0}")]
    Orphan(usize),
    #[error("section [{0}] must equal the built-in text exactly")]
    FixedTextChanged(&'static str),
    #[error("section [{section}] uses unknown placeholder {{{name}}}")]
    UnknownPlaceholder { section: String, name: String },
    #[error("section [{section}] is missing placeholder {{{name}}}")]
    MissingPlaceholder { section: String, name: String },
    #[error("section [{0}] is missing")]
    MissingSection(String),
}

/// Placeholders each section must contain.
const SECTIONS: &[(&str, &[&str])] = &[
    ("system_preamble", &[]),
    ("hint_suffix", &[]),
    ("paraphrase", &["task_description", "seed_prompt", "n_paraphrases"]),
    (
        "reflect_short",
        &["task_description", "better_prompt", "better_score", "worse_prompt", "worse_score"],
    ),
    ("reflect_long", &["task_description", "long_term_memory", "short_term_hints"]),
    ("memory_summarize", &["task_description", "long_term_memory", "memory_char_cap"]),
    (
        "crossover",
        &[
            "task_description",
            "better_prompt",
            "better_score",
            "worse_prompt",
            "worse_score",
            "short_term_hint",
            "memory_block",
        ],
    ),
    ("crossover_memory_block", &["long_term_memory"]),
    ("mutate", &["task_description", "elite_prompt", "elite_score", "memory_block"]),
    ("mutate_memory_block", &["long_term_memory"]),
    ("baseline_crossover", &["task_description", "first_prompt", "second_prompt"]),
    ("baseline_mutate", &["task_description", "current_prompt"]),
];

#[derive(Clone, Debug, PartialEq)]
pub struct OperatorTemplates {
    sections: BTreeMap<String, String>,
}

fn parse_sections(text: &str) -> Result<BTreeMap<String, String>, TemplateError> {
    let mut sections = BTreeMap::new();
    let mut current: Option<(String, Vec<&str>)> = None;
    let flush = |cur: Option<(String, Vec<&str>)>, out: &mut BTreeMap<String, String>| {
        if let Some((name, lines)) = cur {
            let body = lines.join("\n").trim().to_string();
            if out.insert(name.clone(), body).is_some() {
                return Err(TemplateError::DuplicateSection(name));
            }
        }
        Ok(())
    };
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let header = line
            .strip_prefix('[')
            .and_then(|l| l.strip_suffix(']'))
            .filter(|n| !n.is_empty() && n.chars().all(|c| c.is_ascii_lowercase() || c == '_'));
        match (header, &mut current) {
            (Some(name), _) => {
                flush(current.take(), &mut sections)?;
                current = Some((name.to_string(), Vec::new()));
            }
            (None, Some((_, lines))) => lines.push(line),
            (None, None) if line.trim().is_empty() => {}
            (None, None) => return Err(TemplateError::Orphan(lineno + 1)),
        }
    }
    flush(current, &mut sections)?;
    Ok(sections)
}

fn placeholders(template: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close)
                if close > 0
                    && after[..close]
                        .chars()
                        .all(|c| c.is_ascii_lowercase() || c == '_') =>
            {
                out.push(&after[..close]);
                rest = &after[close + 1..];
            }
            _ => rest = after,
        }
    }
    out
}

impl OperatorTemplates {
    pub fn builtin() -> Self {
        let templates = Self {
            sections: parse_sections(DEFAULT_TEMPLATES).expect("built-in templates parse"),
        };
        templates.validate().expect("built-in templates are valid");
        templates
    }

    /// Parses a template file, filling absent sections from the built-ins.
    pub fn from_text(text: &str) -> Result<Self, TemplateError> {
        let overrides = parse_sections(text)?;
        let mut sections = Self::builtin().sections;
        for (name, body) in overrides {
            if !SECTIONS.iter().any(|(s, _)| *s == name) {
                return Err(TemplateError::UnknownSection(name));
            }
            sections.insert(name, body);
        }
        let templates = Self { sections };
        templates.validate()?;
        Ok(templates)
    }

    fn validate(&self) -> Result<(), TemplateError> {
        for (name, required) in SECTIONS {
            let body = self
                .sections
                .get(*name)
                .ok_or_else(|| TemplateError::MissingSection(name.to_string()))?;
            for used in placeholders(body) {
                if !required.contains(&used) {
                    return Err(TemplateError::UnknownPlaceholder {
                        section: name.to_string(),
                        name: used.to_string(),
                    });
                }
            }
            let used = placeholders(body);
            for need in *required {
                if !used.contains(need) {
                    return Err(TemplateError::MissingPlaceholder {
                        section: name.to_string(),
                        name: need.to_string(),
                    });
                }
            }
        }
        if self.sections["system_preamble"] != SYSTEM_PREAMBLE {
            return Err(TemplateError::FixedTextChanged("system_preamble"));
        }
        if self.sections["hint_suffix"] != HINT_SUFFIX {
            return Err(TemplateError::FixedTextChanged("hint_suffix"));
        }
        Ok(())
    }

    pub fn system_preamble(&self) -> &str {
        &self.sections["system_preamble"]
    }

    pub fn hint_suffix(&self) -> &str {
        &self.sections["hint_suffix"]
    }

    /// Fills `{name}` placeholders of `section` in a single pass, so braces
    /// inside substituted values are never expanded.
    pub fn render(&self, section: &str, values: &[(&str, &str)]) -> String {
        let template = self
            .sections
            .get(section)
            .unwrap_or_else(|| panic!("unknown template section {section}"));
        let mut out = String::with_capacity(template.len() + 256);
        let mut rest = template.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let substituted = after.find('}').and_then(|close| {
                let key = &after[..close];
                values
                    .iter()
                    .find(|(k, _)| *k == key)
                    .map(|(_, v)| (close, *v))
            });
            match substituted {
                Some((close, value)) => {
                    out.push_str(value);
                    rest = &after[close + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

impl Default for OperatorTemplates {
    fn default() -> Self {
        Self::builtin()
    }
}
