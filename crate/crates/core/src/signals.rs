//! Token-level uncertainty signals and the retrieval trigger.
//!
//! Every generated token carries two signals: the entropy of the next-token
//! distribution it was sampled from, and the largest attention weight any
//! later token places on it. A segment triggers retrieval when some token's
//! weighted signal strictly exceeds a threshold, either a fixed value or the
//! weighted mean of the same signals over the segment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `Σp = 1` accepted by [`token_entropy`].
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

/// Fixed threshold used when [`TriggerMode::Fixed`] is selected without an override.
pub const DEFAULT_FIXED_THRESHOLD: f64 = 0.6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("attention weight {0} outside [0, 1]")]
    InvalidWeight(f64),
    #[error("invalid token event at index {index}: {reason}")]
    InvalidEvent { index: usize, reason: String },
    #[error("segment has no token events")]
    EmptySegment,
    #[error("invalid trigger config: {0}")]
    InvalidConfig(String),
}

/// One generated token with its uncertainty signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEvent {
    pub index: usize,
    pub text: String,
    /// Entropy of the next-token distribution, in nats.
    pub entropy: f64,
    pub max_attn: f64,
}

impl TokenEvent {
    pub fn new(index: usize, text: impl Into<String>, entropy: f64, max_attn: f64) -> Result<Self, SignalError> {
        let event = Self {
            index,
            text: text.into(),
            entropy,
            max_attn,
        };
        event.validate()?;
        Ok(event)
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if self.entropy < 0.0 || !self.entropy.is_finite() {
            return Err(SignalError::InvalidEvent {
                index: self.index,
                reason: format!("entropy {} is not a finite non-negative number", self.entropy),
            });
        }
        if !(0.0..=1.0).contains(&self.max_attn) {
            return Err(SignalError::InvalidEvent {
                index: self.index,
                reason: format!("max_attn {} outside [0, 1]", self.max_attn),
            });
        }
        Ok(())
    }
}

/// Checks per-event invariants and that indices run 0, 1, 2, ...
pub fn validate_segment(events: &[TokenEvent]) -> Result<(), SignalError> {
    for (position, event) in events.iter().enumerate() {
        event.validate()?;
        if event.index != position {
            return Err(SignalError::InvalidEvent {
                index: event.index,
                reason: format!("expected contiguous index {position}"),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerMode {
    Dynamic,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerConfig {
    pub mode: TriggerMode,
    pub alpha: f64,
    pub beta: f64,
    /// Only consulted in [`TriggerMode::Fixed`].
    pub fixed_threshold: f64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            mode: TriggerMode::Dynamic,
            alpha: 1.0,
            beta: 1.0,
            fixed_threshold: DEFAULT_FIXED_THRESHOLD,
        }
    }
}

impl TriggerConfig {
    pub fn dynamic(alpha: f64, beta: f64) -> Self {
        Self {
            mode: TriggerMode::Dynamic,
            alpha,
            beta,
            ..Self::default()
        }
    }

    pub fn fixed(threshold: f64) -> Self {
        Self {
            mode: TriggerMode::Fixed,
            fixed_threshold: threshold,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if self.alpha.is_nan() || self.alpha < 0.0 || self.beta.is_nan() || self.beta < 0.0 {
            return Err(SignalError::InvalidConfig(format!(
                "alpha ({}) and beta ({}) must be non-negative",
                self.alpha, self.beta
            )));
        }
        if self.mode == TriggerMode::Dynamic && self.alpha + self.beta <= 0.0 {
            return Err(SignalError::InvalidConfig(
                "alpha + beta must be positive in dynamic mode".into(),
            ));
        }
        if self.mode == TriggerMode::Fixed && !self.fixed_threshold.is_finite() {
            return Err(SignalError::InvalidConfig(format!(
                "fixed threshold {} is not finite",
                self.fixed_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerDecision {
    pub triggered: bool,
    /// First token whose score exceeds the threshold; `None` when not triggered.
    pub token_index: Option<usize>,
    pub threshold_used: f64,
    pub max_score: f64,
}

/// Shannon entropy in nats, with `0·ln 0 = 0`.
pub fn token_entropy(dist: &[f64]) -> Result<f64, SignalError> {
    if dist.is_empty() {
        return Err(SignalError::InvalidDistribution("empty vector".into()));
    }
    if let Some(p) = dist.iter().find(|p| **p < 0.0 || !p.is_finite()) {
        return Err(SignalError::InvalidDistribution(format!(
            "component {p} is not a finite non-negative number"
        )));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > DISTRIBUTION_TOLERANCE {
        return Err(SignalError::InvalidDistribution(format!("components sum to {total}")));
    }
    let h: f64 = dist.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum();
    // Rounding on near-one-hot inputs can leave a tiny negative residue.
    Ok(h.max(0.0))
}

/// Largest attention weight from later tokens; 0 when nothing attends.
pub fn max_attention(weights: &[f64]) -> Result<f64, SignalError> {
    weights.iter().try_fold(0.0_f64, |acc, &w| {
        if (0.0..=1.0).contains(&w) {
            Ok(acc.max(w))
        } else {
            Err(SignalError::InvalidWeight(w))
        }
    })
}

pub fn rind_score(event: &TokenEvent, cfg: &TriggerConfig) -> f64 {
    cfg.alpha * event.entropy + cfg.beta * event.max_attn
}

/// Weighted mean of the segment's signals.
pub fn dynamic_threshold(events: &[TokenEvent], cfg: &TriggerConfig) -> Result<f64, SignalError> {
    if events.is_empty() {
        return Err(SignalError::EmptySegment);
    }
    let n = events.len() as f64;
    let mean_entropy = events.iter().map(|e| e.entropy).sum::<f64>() / n;
    let mean_attn = events.iter().map(|e| e.max_attn).sum::<f64>() / n;
    Ok(cfg.alpha * mean_entropy + cfg.beta * mean_attn)
}

pub fn should_retrieve(events: &[TokenEvent], cfg: &TriggerConfig) -> Result<TriggerDecision, SignalError> {
    if events.is_empty() {
        return Err(SignalError::EmptySegment);
    }
    let threshold = match cfg.mode {
        TriggerMode::Dynamic => dynamic_threshold(events, cfg)?,
        TriggerMode::Fixed => cfg.fixed_threshold,
    };
    Ok(decide(events, cfg, threshold))
}

fn decide(events: &[TokenEvent], cfg: &TriggerConfig, threshold: f64) -> TriggerDecision {
    let mut max_score = f64::NEG_INFINITY;
    let mut token_index = None;
    for event in events {
        let score = rind_score(event, cfg);
        if score > max_score {
            max_score = score;
        }
        if token_index.is_none() && exceeds(score, threshold) {
            token_index = Some(event.index);
        }
    }
    TriggerDecision {
        triggered: token_index.is_some(),
        token_index,
        threshold_used: threshold,
        max_score,
    }
}

/// Strict `score > threshold`, treating differences at rounding level as ties
/// so a segment of identical scores never exceeds its own mean.
fn exceeds(score: f64, threshold: f64) -> bool {
    score > threshold + TIE_EPSILON * threshold.abs().max(1.0)
}

const TIE_EPSILON: f64 = 1e-12;

/// Folds per-step attention-to-past maps into each token's max attention
/// from later tokens. `attn_rows[j]` holds `(i, w)` pairs with `i < j`.
pub fn fold_future_attention(token_count: usize, attn_rows: &[Vec<(usize, f64)>]) -> Result<Vec<f64>, SignalError> {
    let mut max_attn = vec![0.0_f64; token_count];
    for (step, row) in attn_rows.iter().enumerate() {
        for &(past, weight) in row {
            if !(0.0..=1.0).contains(&weight) {
                return Err(SignalError::InvalidWeight(weight));
            }
            if past >= step || past >= token_count {
                return Err(SignalError::InvalidEvent {
                    index: step,
                    reason: format!("attention to non-past position {past}"),
                });
            }
            max_attn[past] = max_attn[past].max(weight);
        }
    }
    Ok(max_attn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn events_from(pairs: &[(f64, f64)]) -> Vec<TokenEvent> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, &(h, a))| TokenEvent::new(i, format!("t{i}"), h, a).unwrap())
            .collect()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-6
    }

    #[test]
    fn entropy_examples() {
        assert!(close(token_entropy(&[0.25; 4]).unwrap(), 4f64.ln()));
        assert_eq!(token_entropy(&[0.0, 0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!(close(token_entropy(&[0.5, 0.5]).unwrap(), std::f64::consts::LN_2));
    }

    #[test]
    fn entropy_rejects_bad_input() {
        assert!(matches!(token_entropy(&[]), Err(SignalError::InvalidDistribution(_))));
        assert!(token_entropy(&[1.5, -0.5]).is_err());
        assert!(token_entropy(&[0.5, 0.4]).is_err());
        assert!(token_entropy(&[f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn max_attention_examples() {
        assert_eq!(max_attention(&[0.1, 0.7, 0.2]).unwrap(), 0.7);
        assert_eq!(max_attention(&[0.3]).unwrap(), 0.3);
        assert_eq!(max_attention(&[]).unwrap(), 0.0);
        assert_eq!(max_attention(&[0.2, 1.2]), Err(SignalError::InvalidWeight(1.2)));
    }

    #[test]
    fn rind_score_examples() {
        let cfg = TriggerConfig::dynamic(1.0, 1.0);
        let e = TokenEvent::new(0, "x", 1.0, 0.5).unwrap();
        assert_eq!(rind_score(&e, &cfg), 1.5);
        let e = TokenEvent::new(0, "x", 2.0, 0.9).unwrap();
        assert_eq!(rind_score(&e, &TriggerConfig::dynamic(1.0, 0.0)), 2.0);
        assert_eq!(rind_score(&e, &TriggerConfig::dynamic(0.0, 1.0)), 0.9);
    }

    #[test]
    fn dynamic_threshold_examples() {
        let ev = events_from(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]);
        assert!(close(
            dynamic_threshold(&ev, &TriggerConfig::dynamic(1.0, 0.0)).unwrap(),
            2.0
        ));
        let ev = events_from(&[(0.0, 0.2), (0.0, 0.4)]);
        assert!(close(
            dynamic_threshold(&ev, &TriggerConfig::dynamic(0.0, 1.0)).unwrap(),
            0.3
        ));
        let ev = events_from(&[(1.0, 0.5), (1.0, 0.5)]);
        assert!(close(
            dynamic_threshold(&ev, &TriggerConfig::dynamic(1.0, 1.0)).unwrap(),
            1.5
        ));
        assert_eq!(
            dynamic_threshold(&[], &TriggerConfig::default()),
            Err(SignalError::EmptySegment)
        );
    }

    #[test]
    fn fixed_trigger_examples() {
        // alpha=1, beta=0 so the score is the entropy.
        let cfg = TriggerConfig {
            alpha: 1.0,
            beta: 0.0,
            ..TriggerConfig::fixed(0.6)
        };
        let d = should_retrieve(&events_from(&[(0.1, 0.0), (0.4, 0.0), (0.58, 0.0)]), &cfg).unwrap();
        assert!(!d.triggered);
        assert_eq!(d.token_index, None);
        let d = should_retrieve(&events_from(&[(0.1, 0.0), (0.7, 0.0), (0.9, 0.0)]), &cfg).unwrap();
        assert!(d.triggered);
        assert_eq!(d.token_index, Some(1));
        assert_eq!(d.max_score, 0.9);
    }

    #[test]
    fn dynamic_uniform_does_not_trigger() {
        let d = should_retrieve(
            &events_from(&[(1.0, 0.0), (1.0, 0.0), (1.0, 0.0)]),
            &TriggerConfig::dynamic(1.0, 0.0),
        )
        .unwrap();
        assert!(!d.triggered);
    }

    #[test]
    fn fixed_default_is_point_six() {
        assert_eq!(TriggerConfig::fixed(DEFAULT_FIXED_THRESHOLD).fixed_threshold, 0.6);
        assert_eq!(TriggerConfig::default().fixed_threshold, 0.6);
    }

    #[test]
    fn config_validation() {
        assert!(TriggerConfig::dynamic(0.0, 0.0).validate().is_err());
        assert!(TriggerConfig::dynamic(-1.0, 2.0).validate().is_err());
        assert!(TriggerConfig::dynamic(0.0, 1.0).validate().is_ok());
        assert!(TriggerConfig {
            alpha: 0.0,
            beta: 0.0,
            ..TriggerConfig::fixed(0.6)
        }
        .validate()
        .is_ok());
    }

    #[test]
    fn segment_validation() {
        let mut ev = events_from(&[(0.1, 0.2), (0.3, 0.4)]);
        assert!(validate_segment(&ev).is_ok());
        ev[1].index = 5;
        assert!(validate_segment(&ev).is_err());
        assert!(TokenEvent::new(0, "x", -0.1, 0.0).is_err());
        assert!(TokenEvent::new(0, "x", 0.1, 1.1).is_err());
    }

    #[test]
    fn attention_fold() {
        // Step 1 attends to 0 with 0.4, step 2 attends to 0 with 0.9 and 1 with 0.2.
        let rows = vec![vec![], vec![(0, 0.4)], vec![(0, 0.9), (1, 0.2)]];
        assert_eq!(fold_future_attention(3, &rows).unwrap(), vec![0.9, 0.2, 0.0]);
        assert!(fold_future_attention(2, &[vec![], vec![(1, 0.5)]]).is_err());
        assert!(fold_future_attention(2, &[vec![], vec![(0, 1.5)]]).is_err());
    }

    fn distribution() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 2..50).prop_filter_map("zero mass", |raw| {
            let total: f64 = raw.iter().sum();
            (total > 1e-9).then(|| raw.iter().map(|x| x / total).collect())
        })
    }

    fn segment() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((0.0f64..5.0, 0.0f64..=1.0), 1..30)
    }

    proptest! {
        #[test]
        fn entropy_bounded_by_log_support(dist in distribution()) {
            let h = token_entropy(&dist).unwrap();
            prop_assert!(h >= 0.0);
            prop_assert!(h <= (dist.len() as f64).ln() + 1e-9);
        }

        #[test]
        fn entropy_permutation_invariant(dist in distribution(), rot in 0usize..50) {
            let mut rotated = dist.clone();
            let len = rotated.len();
            rotated.rotate_left(rot % len);
            rotated.reverse();
            let a = token_entropy(&dist).unwrap();
            let b = token_entropy(&rotated).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn fixed_trigger_monotone(
            seg in segment(),
            pick in 0usize..30,
            bump_h in 0.0f64..3.0,
            bump_a in 0.0f64..1.0,
            theta in 0.0f64..4.0,
        ) {
            let cfg = TriggerConfig::fixed(theta);
            let events = events_from(&seg);
            let before = should_retrieve(&events, &cfg).unwrap();
            let mut raised = events.clone();
            let i = pick % raised.len();
            raised[i].entropy += bump_h;
            raised[i].max_attn = (raised[i].max_attn + bump_a).min(1.0);
            let after = should_retrieve(&raised, &cfg).unwrap();
            prop_assert!(!before.triggered || after.triggered);
        }

        #[test]
        fn fixed_equals_dynamic_at_same_threshold(seg in segment(), alpha in 0.0f64..2.0, beta in 0.01f64..2.0) {
            let events = events_from(&seg);
            let dynamic = TriggerConfig::dynamic(alpha, beta);
            let dyn_decision = should_retrieve(&events, &dynamic).unwrap();
            let fixed = TriggerConfig {
                mode: TriggerMode::Fixed,
                fixed_threshold: dyn_decision.threshold_used,
                ..dynamic
            };
            prop_assert_eq!(should_retrieve(&events, &fixed).unwrap(), dyn_decision);
        }

        #[test]
        fn decision_invariants(seg in segment(), theta in 0.0f64..4.0) {
            let d = should_retrieve(&events_from(&seg), &TriggerConfig::fixed(theta)).unwrap();
            if d.triggered {
                prop_assert!(d.token_index.is_some());
                prop_assert!(d.max_score > d.threshold_used);
            } else {
                prop_assert!(d.token_index.is_none());
            }
        }
    }
}
