//! Answer-quality metrics.
//!
//! Two scores drive both evaluation and the training reward:
//!
//! ```text
//! fEM(y, golds)      = 1 if any normalized gold is a substring of normalized y
//! c3recall(y, gold)  = |trigrams(y) ∩ trigrams(gold)| / |trigrams(gold)|
//! ```
//!
//! Trigrams are overlapping character 3-grams of the normalized strings,
//! spaces included, matched as multisets. Partial credit from `c3recall`
//! is what lets the trainer reward near-miss answers (morphological
//! variants, missing diacritics) that exact match would score zero.

use std::collections::HashMap;

use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::protocol::Trajectory;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("at least one gold answer is required")]
    EmptyGolds,
}

/// Canonical text form used by every metric: NFKC, lowercased, punctuation
/// and symbols replaced by spaces, whitespace collapsed, trimmed.
/// The result is idempotent under re-normalization.
pub fn normalize_text(text: &str) -> String {
    let folded: String = text.nfkc().flat_map(char::to_lowercase).collect();
    let mut out = String::with_capacity(folded.len());
    let mut pending_space = false;
    for c in folded.chars() {
        if c.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        } else {
            pending_space = true;
        }
    }
    out
}

fn trigrams(s: &str) -> HashMap<[char; 3], u32> {
    let chars: Vec<char> = s.chars().collect();
    let mut counts = HashMap::new();
    for w in chars.windows(3) {
        *counts.entry([w[0], w[1], w[2]]).or_insert(0) += 1;
    }
    counts
}

/// Multiset recall of the gold's character trigrams in the prediction,
/// after normalization. A gold shorter than three normalized characters has
/// no trigrams, so the score falls back to exact match after normalization.
pub fn char_3gram_recall(pred: &str, gold: &str) -> f64 {
    let pred_n = normalize_text(pred);
    let gold_n = normalize_text(gold);
    let gold_grams = trigrams(&gold_n);
    let total: u32 = gold_grams.values().sum();
    if total == 0 {
        return if pred_n == gold_n { 1.0 } else { 0.0 };
    }
    let pred_grams = trigrams(&pred_n);
    let matched: u32 = gold_grams
        .iter()
        .map(|(g, &c)| c.min(pred_grams.get(g).copied().unwrap_or(0)))
        .sum();
    f64::from(matched) / f64::from(total)
}

/// Fuzzy exact match: 1.0 when any normalized gold alias appears as a
/// substring of the normalized prediction, else 0.0.
pub fn fem(pred: &str, golds: &[String]) -> Result<f64, MetricError> {
    if golds.is_empty() {
        return Err(MetricError::EmptyGolds);
    }
    let pred_n = normalize_text(pred);
    let hit = golds.iter().any(|g| pred_n.contains(&normalize_text(g)));
    Ok(if hit { 1.0 } else { 0.0 })
}

/// Best trigram recall of the prediction against any gold alias.
pub fn best_c3_recall(pred: &str, golds: &[String]) -> Result<f64, MetricError> {
    if golds.is_empty() {
        return Err(MetricError::EmptyGolds);
    }
    Ok(golds
        .iter()
        .map(|g| char_3gram_recall(pred, g))
        .fold(0.0, f64::max))
}

/// Episode-level training reward: trigram recall of the trajectory's answer
/// against the best gold alias, or 0.0 when the trajectory never answered.
pub fn outcome_reward(trajectory: &Trajectory, golds: &[String]) -> Result<f64, MetricError> {
    if golds.is_empty() {
        return Err(MetricError::EmptyGolds);
    }
    match trajectory.answer() {
        Some(answer) => best_c3_recall(answer, golds),
        None => Ok(0.0),
    }
}
