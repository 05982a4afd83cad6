//! Span-level entity confidence and the four entity filter modes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::CandidateEntity;
use crate::signals::TokenEvent;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("entity {0:?} has no token span")]
    MissingSpan(String),
    #[error("entity {surface:?} span [{start}, {end}) outside segment of {len} tokens")]
    SpanOutOfRange {
        surface: String,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("filter mode {0:?} requires chain-of-thought verdicts")]
    MissingVerdicts(FilterMode),
    #[error("{verdicts} verdicts for {entities} entities")]
    VerdictCountMismatch { verdicts: usize, entities: usize },
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    NoFilter,
    #[serde(rename = "cot")]
    CoT,
    Conf,
    #[serde(rename = "cot_conf")]
    CoTConf,
}

impl FilterMode {
    pub fn needs_verdicts(self) -> bool {
        matches!(self, FilterMode::CoT | FilterMode::CoTConf)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    TopK(usize),
    /// Keeps entities with confidence strictly above the value.
    Threshold(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub mode: FilterMode,
    pub gamma: f64,
    pub delta: f64,
    pub selection: Selection,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            mode: FilterMode::CoTConf,
            gamma: 1.0,
            delta: 0.2,
            selection: Selection::TopK(5),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        if self.gamma.is_nan() || self.gamma < 0.0 || self.delta.is_nan() || self.delta < 0.0 {
            return Err(FilterError::InvalidConfig(format!(
                "gamma ({}) and delta ({}) must be non-negative",
                self.gamma, self.delta
            )));
        }
        if self.selection == Selection::TopK(0) {
            return Err(FilterError::InvalidConfig("top-k must be positive".into()));
        }
        Ok(())
    }
}

/// Per-token confidence term: `γ/(1+entropy) + δ·max_attn`.
pub fn token_confidence(event: &TokenEvent, gamma: f64, delta: f64) -> f64 {
    gamma / (1.0 + event.entropy) + delta * event.max_attn
}

/// Maximum of the per-token confidence term over the entity's span.
pub fn entity_confidence(
    entity: &CandidateEntity,
    events: &[TokenEvent],
    cfg: &FilterConfig,
) -> Result<f64, FilterError> {
    let (start, end) = entity
        .span
        .ok_or_else(|| FilterError::MissingSpan(entity.surface.clone()))?;
    if start >= end || end > events.len() {
        return Err(FilterError::SpanOutOfRange {
            surface: entity.surface.clone(),
            start,
            end,
            len: events.len(),
        });
    }
    Ok(events[start..end]
        .iter()
        .map(|e| token_confidence(e, cfg.gamma, cfg.delta))
        .fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilterOutcome {
    pub kept: Vec<CandidateEntity>,
    /// Entities dropped by a confidence pass because they had no usable span.
    pub unscored: usize,
}

pub fn filter_entities(
    entities: &[CandidateEntity],
    events: &[TokenEvent],
    cfg: &FilterConfig,
    cot_keep: Option<&[bool]>,
) -> Result<FilterOutcome, FilterError> {
    let cot_pass = |entities: &[CandidateEntity]| -> Result<Vec<CandidateEntity>, FilterError> {
        let keep = cot_keep.ok_or(FilterError::MissingVerdicts(cfg.mode))?;
        if keep.len() != entities.len() {
            return Err(FilterError::VerdictCountMismatch {
                verdicts: keep.len(),
                entities: entities.len(),
            });
        }
        Ok(entities
            .iter()
            .zip(keep)
            .filter(|(_, keep)| **keep)
            .map(|(e, _)| e.clone())
            .collect())
    };
    match cfg.mode {
        FilterMode::NoFilter => Ok(FilterOutcome {
            kept: entities.to_vec(),
            unscored: 0,
        }),
        FilterMode::CoT => Ok(FilterOutcome {
            kept: cot_pass(entities)?,
            unscored: 0,
        }),
        FilterMode::Conf => Ok(confidence_select(entities, events, cfg)),
        FilterMode::CoTConf => {
            let survivors = cot_pass(entities)?;
            Ok(confidence_select(&survivors, events, cfg))
        }
    }
}

/// Scores spanned entities and applies the selection rule; output is in
/// descending confidence, ties by input order.
pub fn confidence_select(entities: &[CandidateEntity], events: &[TokenEvent], cfg: &FilterConfig) -> FilterOutcome {
    let mut unscored = 0;
    let mut scored: Vec<CandidateEntity> = entities
        .iter()
        .filter_map(|e| match entity_confidence(e, events, cfg) {
            Ok(conf) => Some(CandidateEntity {
                confidence: Some(conf),
                ..e.clone()
            }),
            Err(_) => {
                unscored += 1;
                None
            }
        })
        .collect();
    // Stable sort keeps input order among equal confidences.
    scored.sort_by(|a, b| b.confidence.unwrap().total_cmp(&a.confidence.unwrap()));
    let kept = match cfg.selection {
        Selection::TopK(k) => {
            scored.truncate(k);
            scored
        }
        Selection::Threshold(tau) => scored.into_iter().filter(|e| e.confidence.unwrap() > tau).collect(),
    };
    FilterOutcome { kept, unscored }
}
