//! Sentence-level METEOR with exact and stem matching.
//!
//! Hypothesis and reference are lowercased and split on runs of
//! non-alphanumeric characters. Unigrams are aligned one-to-one stage by
//! stage; within a stage the longest still-unaligned run of consecutive
//! matches is taken first, which keeps the number of chunks low. With `m`
//! matches:
//!
//! ```text
//! P = m / |hyp|    R = m / |ref|
//! Fmean   = P * R / (alpha * P + (1 - alpha) * R)
//! penalty = gamma * (chunks / m) ^ beta
//! score   = Fmean * (1 - penalty)
//! ```

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStage {
    Exact,
    Stem,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeteorParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub stages: Vec<MatchStage>,
}

impl Default for MeteorParams {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            beta: 3.0,
            gamma: 0.5,
            stages: vec![MatchStage::Exact, MatchStage::Stem],
        }
    }
}

impl MeteorParams {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(EvalError::Validation(format!("alpha {} not in (0,1)", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(EvalError::Validation(format!("beta {} must be positive", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(EvalError::Validation(format!("gamma {} not in [0,1]", self.gamma)));
        }
        if self.stages.is_empty() {
            return Err(EvalError::Validation("no matching stages".into()));
        }
        Ok(())
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// One-to-one unigram alignment as `(hyp_index, ref_index)` pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alignment {
    pub pairs: Vec<(usize, usize)>,
}

impl Alignment {
    pub fn matches(&self) -> usize {
        self.pairs.len()
    }

    /// Maximal runs that are contiguous in both hypothesis and reference.
    pub fn chunks(&self) -> usize {
        let mut sorted = self.pairs.clone();
        sorted.sort_unstable();
        sorted
            .windows(2)
            .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
            .count()
            + usize::from(!sorted.is_empty())
    }
}

fn stage_keys(tokens: &[String], stage: MatchStage, stemmer: &Stemmer) -> Vec<String> {
    match stage {
        MatchStage::Exact => tokens.to_vec(),
        MatchStage::Stem => tokens.iter().map(|t| stemmer.stem(t).into_owned()).collect(),
    }
}

pub fn align(hyp: &[String], reference: &[String], stages: &[MatchStage]) -> Alignment {
    let stemmer = Stemmer::create(Algorithm::English);
    let mut hyp_used = vec![false; hyp.len()];
    let mut ref_used = vec![false; reference.len()];
    let mut pairs = Vec::new();
    for &stage in stages {
        let hk = stage_keys(hyp, stage, &stemmer);
        let rk = stage_keys(reference, stage, &stemmer);
        loop {
            // run[i][j]: length of the unaligned matching run starting at (i, j)
            let (h, r) = (hyp.len(), reference.len());
            let mut run = vec![0usize; (h + 1) * (r + 1)];
            let mut best: Option<(usize, usize, usize)> = None;
            for i in (0..h).rev() {
                for j in (0..r).rev() {
                    if !hyp_used[i] && !ref_used[j] && hk[i] == rk[j] {
                        let len = 1 + run[(i + 1) * (r + 1) + j + 1];
                        run[i * (r + 1) + j] = len;
                        // scanning backwards, `>=` keeps the earliest (i, j) among equal lengths
                        if best.is_none_or(|(_, _, l)| len >= l) {
                            best = Some((i, j, len));
                        }
                    }
                }
            }
            let Some((i, j, len)) = best else { break };
            for k in 0..len {
                hyp_used[i + k] = true;
                ref_used[j + k] = true;
                pairs.push((i + k, j + k));
            }
        }
    }
    pairs.sort_unstable();
    Alignment { pairs }
}

/// Score from an alignment count and chunk count.
pub fn score_from_counts(matches: usize, chunks: usize, hyp_len: usize, ref_len: usize, params: &MeteorParams) -> f64 {
    if matches == 0 || hyp_len == 0 || ref_len == 0 {
        return 0.0;
    }
    let m = matches as f64;
    let precision = m / hyp_len as f64;
    let recall = m / ref_len as f64;
    let fmean = precision * recall / (params.alpha * precision + (1.0 - params.alpha) * recall);
    let penalty = params.gamma * (chunks as f64 / m).powf(params.beta);
    (fmean * (1.0 - penalty)).clamp(0.0, 1.0)
}

pub fn meteor_sentence(hypothesis: &str, reference: &str, params: &MeteorParams) -> f64 {
    let hyp = tokenize(hypothesis);
    let reference = tokenize(reference);
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let alignment = align(&hyp, &reference, &params.stages);
    score_from_counts(alignment.matches(), alignment.chunks(), hyp.len(), reference.len(), params)
}
