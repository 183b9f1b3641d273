//! Answer extraction and macro-averaged F1.

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::types::LabelSpec;

/// A parsed model answer.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Label(String),
    Unmatched,
}

impl Prediction {
    pub fn label(&self) -> Option<&str> {
        match self {
            Prediction::Label(l) => Some(l),
            Prediction::Unmatched => None,
        }
    }
}

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(char::is_alphanumeric)
}

/// Byte offset of the first whole-word occurrence of `needle` in `haystack`.
fn first_whole_word(haystack: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    haystack.match_indices(needle).map(|(i, _)| i).find(|&i| {
        let before = haystack[..i].chars().next_back();
        let after = haystack[i + needle.len()..].chars().next();
        !is_word_char(before) && !is_word_char(after)
    })
}

/// Earliest whole-word, case-insensitive mention of any label name or alias.
/// Mentions starting at the same position resolve to the label listed first.
pub fn extract_label(raw_output: &str, labels: &[LabelSpec]) -> Prediction {
    let text = raw_output.to_lowercase();
    let mut best: Option<(usize, usize)> = None;
    for (order, label) in labels.iter().enumerate() {
        for form in label.surface_forms() {
            if let Some(pos) = first_whole_word(&text, &form.to_lowercase()) {
                if best.is_none_or(|(p, o)| pos < p || (pos == p && order < o)) {
                    best = Some((pos, order));
                }
            }
        }
    }
    match best {
        Some((_, order)) => Prediction::Label(labels[order].name.clone()),
        None => Prediction::Unmatched,
    }
}

/// Unweighted mean of per-label F1 over `label_names`.
///
/// An unmatched prediction counts as a false negative for its gold label and
/// a false positive for nobody. Labels with no true positives score 0 and are
/// still part of the average.
pub fn macro_f1(predictions: &[Prediction], golds: &[String], label_names: &[&str]) -> Result<f64, EvalError> {
    if predictions.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    if golds.is_empty() {
        return Err(EvalError::NoSamples);
    }
    if label_names.is_empty() {
        return Err(EvalError::Validation("empty label set".into()));
    }
    let index_of = |name: &str| label_names.iter().position(|l| *l == name);
    let k = label_names.len();
    let (mut tp, mut fp, mut fn_) = (vec![0u64; k], vec![0u64; k], vec![0u64; k]);
    for (pred, gold) in predictions.iter().zip(golds) {
        let g = index_of(gold).ok_or_else(|| EvalError::UnknownLabel(gold.clone()))?;
        match pred.label() {
            Some(p) => {
                let p = index_of(p).ok_or_else(|| EvalError::UnknownLabel(p.to_string()))?;
                if p == g {
                    tp[g] += 1;
                } else {
                    fp[p] += 1;
                    fn_[g] += 1;
                }
            }
            None => fn_[g] += 1,
        }
    }
    let total: f64 = (0..k)
        .map(|i| {
            let denom = 2 * tp[i] + fp[i] + fn_[i];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[i] as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / k as f64)
}
