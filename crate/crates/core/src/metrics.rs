//! Answer normalization and EM / F1 / yes-no accuracy.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("example has no gold answers")]
    NoGold,
    #[error("yes/no gold {0:?} is neither \"yes\" nor \"no\"")]
    NotYesNo(String),
}

/// Lowercase, strip ASCII punctuation, drop the articles a/an/the, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn check_golds(golds: &[String]) -> Result<(), MetricError> {
    if golds.is_empty() {
        Err(MetricError::NoGold)
    } else {
        Ok(())
    }
}

pub fn exact_match(prediction: &str, golds: &[String]) -> Result<f64, MetricError> {
    check_golds(golds)?;
    let pred = normalize_answer(prediction);
    Ok(if golds.iter().any(|g| normalize_answer(g) == pred) {
        1.0
    } else {
        0.0
    })
}

/// Token-overlap precision, recall and F1 against one gold.
fn overlap(prediction: &str, gold: &str) -> (f64, f64, f64) {
    let pred = normalize_answer(prediction);
    let gold = normalize_answer(gold);
    let pred_tokens: Vec<&str> = pred.split_whitespace().collect();
    let gold_tokens: Vec<&str> = gold.split_whitespace().collect();
    match (pred_tokens.is_empty(), gold_tokens.is_empty()) {
        (true, true) => return (1.0, 1.0, 1.0),
        (true, false) | (false, true) => return (0.0, 0.0, 0.0),
        _ => {}
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold_tokens {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pred_tokens {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return (0.0, 0.0, 0.0);
    }
    let p = common as f64 / pred_tokens.len() as f64;
    let r = common as f64 / gold_tokens.len() as f64;
    (p, r, 2.0 * p * r / (p + r))
}

pub fn token_f1(prediction: &str, golds: &[String]) -> Result<f64, MetricError> {
    check_golds(golds)?;
    Ok(golds.iter().map(|g| overlap(prediction, g).2).fold(0.0, f64::max))
}

/// Token precision against the gold with the best F1.
pub fn token_precision(prediction: &str, golds: &[String]) -> Result<f64, MetricError> {
    check_golds(golds)?;
    let best = golds
        .iter()
        .map(|g| overlap(prediction, g))
        .max_by(|a, b| a.2.total_cmp(&b.2))
        .expect("golds non-empty");
    Ok(best.0)
}

/// 1 when the first whole-word "yes"/"no" in the prediction equals the gold.
pub fn yesno_accuracy(prediction: &str, golds: &[String]) -> Result<f64, MetricError> {
    check_golds(golds)?;
    let gold = normalize_answer(&golds[0]);
    if gold != "yes" && gold != "no" {
        return Err(MetricError::NotYesNo(golds[0].clone()));
    }
    let pred = normalize_answer(prediction);
    let first = pred.split_whitespace().find(|w| *w == "yes" || *w == "no");
    Ok(if first == Some(gold.as_str()) { 1.0 } else { 0.0 })
}
