//! The multi-hop loop.
//!
//! Each hop generates a reasoning segment that also lists candidate entities
//! in the extraction grammar. If the segment's token signals trigger
//! retrieval, the listed entities are aligned to their tokens, filtered, and
//! turned into a sub-query; the retrieved passages feed the next hop's prompt
//! and the kept entities plus retrieved titles go into memory. A hop that does
//! not trigger ends the loop and the answer is synthesized from memory.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::{align_spans, build_extraction_prompt, cot_validate, parse_extraction_output, CandidateEntity};
use crate::filter::{entity_confidence, filter_entities, FilterConfig, FilterError};
use crate::gateway::{GatewayError, GenerationRequest, GenerationSegment, Generator};
use crate::memory::{MemoryRecord, MemorySource, MemoryStore};
use crate::prompts::{render, PromptSet};
use crate::retriever::{InvertedIndex, RetrieverError, ScoredDoc};
use crate::signals::{should_retrieve, SignalError, TriggerConfig, TriggerDecision, TriggerMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub trigger: TriggerConfig,
    pub filter: FilterConfig,
    pub retrieval_k: usize,
    pub max_hops: usize,
    pub max_tokens_per_segment: usize,
    pub memory_budget_chars: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            trigger: TriggerConfig::default(),
            filter: FilterConfig::default(),
            retrieval_k: 3,
            max_hops: 5,
            max_tokens_per_segment: 256,
            memory_budget_chars: 1200,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Trigger(#[from] SignalError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("{0} must be positive")]
    NotPositive(&'static str),
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.trigger.validate()?;
        self.filter.validate()?;
        for (name, value) in [
            ("retrieval_k", self.retrieval_k),
            ("max_hops", self.max_hops),
            ("max_tokens_per_segment", self.max_tokens_per_segment),
            ("memory_budget_chars", self.memory_budget_chars),
        ] {
            if value == 0 {
                return Err(ConfigError::NotPositive(name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopRecord {
    pub hop_index: usize,
    pub segment: GenerationSegment,
    pub decision: TriggerDecision,
    pub extracted: Vec<CandidateEntity>,
    pub kept: Vec<CandidateEntity>,
    pub subquery: Option<String>,
    pub retrieved: Vec<ScoredDoc>,
    pub memory_writes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    NoTrigger,
    MaxHops,
    TraceEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopTrace {
    pub question: String,
    pub hops: Vec<HopRecord>,
    pub final_answer: String,
    pub total_retrievals: usize,
    pub terminated_by: Termination,
    pub memory: Vec<MemoryRecord>,
}

impl HopTrace {
    /// One JSON object, fields in declaration order.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("hop traces serialize")
    }

    pub fn triggered_hops(&self) -> usize {
        self.hops.iter().filter(|h| h.decision.triggered).count()
    }
}

#[derive(Debug, Error)]
pub enum PipelineErrorKind {
    #[error("provider: {0}")]
    Provider(#[from] GatewayError),
    #[error("retriever: {0}")]
    Retriever(#[from] RetrieverError),
    #[error("filter: {0}")]
    Filter(#[from] FilterError),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
}

/// A failed run with the hops completed before the failure.
#[derive(Debug, Error)]
#[error("{kind} (after {} hops)", partial.hops.len())]
pub struct PipelineError {
    pub kind: PipelineErrorKind,
    pub partial: Box<HopTrace>,
}

/// Everything a run needs besides the question and the provider.
pub struct Pipeline<'a> {
    pub index: &'a InvertedIndex,
    pub config: &'a PipelineConfig,
    pub prompts: &'a PromptSet,
}

struct RunState {
    question: String,
    hops: Vec<HopRecord>,
    memory: MemoryStore,
}

impl RunState {
    fn finish(self, final_answer: String, terminated_by: Termination) -> HopTrace {
        let total_retrievals = self.hops.iter().filter(|h| h.decision.triggered).count();
        HopTrace {
            question: self.question,
            hops: self.hops,
            final_answer,
            total_retrievals,
            terminated_by,
            memory: self.memory.records().cloned().collect(),
        }
    }

    fn fail(self, kind: impl Into<PipelineErrorKind>) -> PipelineError {
        PipelineError {
            kind: kind.into(),
            partial: Box::new(self.finish(String::new(), Termination::TraceEnd)),
        }
    }
}

impl Pipeline<'_> {
    pub fn run_question<G: Generator + ?Sized>(
        &self,
        question: &str,
        provider: &mut G,
    ) -> Result<HopTrace, PipelineError> {
        let cfg = self.config;
        let mut state = RunState {
            question: question.to_string(),
            hops: Vec::new(),
            memory: MemoryStore::new(),
        };
        if let Err(e) = cfg.validate() {
            return Err(state.fail(e));
        }
        let mut passages: Vec<ScoredDoc> = Vec::new();

        for hop_index in 0..cfg.max_hops {
            let context = self.hop_context(&state.memory, &passages);
            let prompt = build_extraction_prompt(self.prompts, question, &context);
            let segment = match provider.generate(&GenerationRequest::new(prompt, cfg.max_tokens_per_segment)) {
                Ok(segment) => segment,
                Err(GatewayError::TraceExhausted(_)) => {
                    let answer = state
                        .hops
                        .last()
                        .map(|h| first_line_answer(&h.segment.text))
                        .unwrap_or_default();
                    return Ok(state.finish(answer, Termination::TraceEnd));
                }
                Err(e) => return Err(state.fail(e)),
            };
            let decision = match should_retrieve(&segment.events, &cfg.trigger) {
                Ok(decision) => decision,
                // A segment without tokens carries no uncertainty signal.
                Err(_) => TriggerDecision {
                    triggered: false,
                    token_index: None,
                    threshold_used: match cfg.trigger.mode {
                        TriggerMode::Fixed => cfg.trigger.fixed_threshold,
                        TriggerMode::Dynamic => 0.0,
                    },
                    max_score: 0.0,
                },
            };

            if !decision.triggered {
                state.hops.push(HopRecord {
                    hop_index,
                    segment,
                    decision,
                    extracted: Vec::new(),
                    kept: Vec::new(),
                    subquery: None,
                    retrieved: Vec::new(),
                    memory_writes: 0,
                });
                return self.conclude(state, provider, Termination::NoTrigger);
            }

            let extracted = align_spans(&parse_extraction_output(&segment.text).entities, &segment);
            let verdicts = if cfg.filter.mode.needs_verdicts() && !extracted.is_empty() {
                match cot_validate(
                    self.prompts,
                    &extracted,
                    question,
                    &segment,
                    provider,
                    cfg.max_tokens_per_segment,
                ) {
                    Ok(v) => Some(v.keep_mask()),
                    Err(e) => return Err(state.fail(e)),
                }
            } else if cfg.filter.mode.needs_verdicts() {
                Some(Vec::new())
            } else {
                None
            };
            let kept = match filter_entities(&extracted, &segment.events, &cfg.filter, verdicts.as_deref()) {
                Ok(outcome) => outcome.kept,
                Err(e) => return Err(state.fail(e)),
            };

            let subquery = form_subquery(question, &kept, &state.memory, cfg.memory_budget_chars);
            let retrieved = match self.index.search(&subquery, cfg.retrieval_k) {
                Ok(hits) => hits,
                Err(e) => return Err(state.fail(e)),
            };

            let before = state.memory.len();
            let mut memory_writes = 0;
            for entity in &kept {
                let confidence = entity
                    .confidence
                    .or_else(|| entity_confidence(entity, &segment.events, &cfg.filter).ok());
                if let Some(confidence) = confidence {
                    state.memory.upsert(MemoryRecord::new(
                        entity.surface.clone(),
                        entity.relation.clone(),
                        confidence,
                        hop_index,
                        MemorySource::Extraction,
                    ));
                    memory_writes += 1;
                }
            }
            for (hit, confidence) in retrieved.iter().zip(normalized_scores(&retrieved)) {
                if let Some(doc) = self.index.get(&hit.doc_id) {
                    state.memory.upsert(MemoryRecord::new(
                        doc.title.clone(),
                        None,
                        confidence,
                        hop_index,
                        MemorySource::Retrieval,
                    ));
                    memory_writes += 1;
                }
            }
            debug_assert!(state.memory.len() >= before);

            state.hops.push(HopRecord {
                hop_index,
                segment,
                decision,
                extracted,
                kept,
                subquery: Some(subquery),
                retrieved: retrieved.clone(),
                memory_writes,
            });
            passages = retrieved;
        }
        self.conclude(state, provider, Termination::MaxHops)
    }

    fn conclude<G: Generator + ?Sized>(
        &self,
        state: RunState,
        provider: &mut G,
        terminated_by: Termination,
    ) -> Result<HopTrace, PipelineError> {
        let last = state.hops.last().map(|h| h.segment.clone());
        match synthesize_answer(
            self.prompts,
            &state.question,
            &state.memory,
            last.as_ref(),
            provider,
            self.config,
        ) {
            Ok(answer) => Ok(state.finish(answer, terminated_by)),
            Err(GatewayError::TraceExhausted(_)) => {
                let answer = last.map(|s| first_line_answer(&s.text)).unwrap_or_default();
                Ok(state.finish(answer, Termination::TraceEnd))
            }
            Err(e) => Err(state.fail(e)),
        }
    }

    fn hop_context(&self, memory: &MemoryStore, passages: &[ScoredDoc]) -> String {
        let mut context = String::new();
        let facts = memory.render(self.config.memory_budget_chars);
        if !facts.is_empty() {
            context.push_str("Known facts:\n");
            context.push_str(&facts);
        }
        if !passages.is_empty() {
            if !context.is_empty() {
                context.push('\n');
            }
            context.push_str("Passages:\n");
            for (i, hit) in passages.iter().enumerate() {
                if let Some(doc) = self.index.get(&hit.doc_id) {
                    context.push_str(&format!("[{}] {}: {}\n", i + 1, doc.title, doc.text));
                }
            }
        }
        context
    }
}

/// Min-max normalized scores within one result list: rank 1 maps to 1.0,
/// the last to 0.0, a single hit to 1.0.
pub fn normalized_scores(hits: &[ScoredDoc]) -> Vec<f64> {
    let (Some(top), Some(bottom)) = (hits.first(), hits.last()) else {
        return Vec::new();
    };
    let range = top.score - bottom.score;
    hits.iter()
        .map(|h| {
            if range > 0.0 {
                (h.score - bottom.score) / range
            } else {
                1.0
            }
        })
        .collect()
}

/// The original question, known facts from memory, and a `Find:` line naming
/// the kept entities. Falls back to the bare question when nothing was kept.
pub fn form_subquery(
    question: &str,
    kept: &[CandidateEntity],
    memory: &MemoryStore,
    memory_budget_chars: usize,
) -> String {
    if kept.is_empty() {
        return question.to_string();
    }
    let mut query = format!("{question}\n");
    let facts = memory.render(memory_budget_chars);
    if !facts.is_empty() {
        query.push_str("Known facts:\n");
        query.push_str(&facts);
    }
    let targets: Vec<String> = kept
        .iter()
        .map(|e| match &e.relation {
            Some(r) => format!("{} ({r})", e.surface),
            None => e.surface.clone(),
        })
        .collect();
    query.push_str("Find: ");
    query.push_str(&targets.join("; "));
    query
}

/// First non-blank line with any leading `Answer:` marker removed.
pub fn first_line_answer(text: &str) -> String {
    let line = text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let stripped = match line.get(..7) {
        Some(prefix) if prefix.eq_ignore_ascii_case("answer:") => &line[7..],
        _ => line,
    };
    stripped.trim().to_string()
}

pub fn synthesize_answer<G: Generator + ?Sized>(
    prompts: &PromptSet,
    question: &str,
    memory: &MemoryStore,
    last_segment: Option<&GenerationSegment>,
    provider: &mut G,
    cfg: &PipelineConfig,
) -> Result<String, GatewayError> {
    let facts = memory.render(cfg.memory_budget_chars);
    let memory_block = if facts.is_empty() {
        String::new()
    } else {
        format!("Known facts:\n{facts}\n")
    };
    let reasoning = last_segment.map(|s| s.text.as_str()).unwrap_or("");
    let prompt = render(
        &prompts.answer,
        &[
            ("question", question),
            ("memory", &memory_block),
            ("reasoning", reasoning),
        ],
    );
    let segment = provider.generate(&GenerationRequest::new(prompt, cfg.max_tokens_per_segment))?;
    Ok(first_line_answer(&segment.text))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{FinishReason, TraceFile, TraceProvider, TraceRecord};
    use crate::retriever::Document;

    fn seg(text: &str, entropy: f64) -> GenerationSegment {
        let words: Vec<String> = text.split_inclusive(' ').map(str::to_string).collect();
        GenerationSegment::from_tokens(words.iter().map(|w| (w.as_str(), entropy, 0.0)), FinishReason::Stop)
    }

    fn spiky(text: &str) -> GenerationSegment {
        let mut s = seg(text, 0.1);
        s.events[0].entropy = 3.0;
        s
    }

    fn provider(segments: Vec<GenerationSegment>) -> TraceProvider {
        TraceProvider::new(TraceFile {
            records: segments
                .into_iter()
                .enumerate()
                .map(|(i, segment)| TraceRecord {
                    step_key: format!("s{i}"),
                    segment,
                })
                .collect(),
        })
    }

    fn index() -> InvertedIndex {
        InvertedIndex::build(vec![
            Document::new("a", "Alpha", "alpha beta gamma"),
            Document::new("b", "Beta", "beta delta"),
        ])
        .unwrap()
    }

    #[test]
    fn answer_trimming() {
        assert_eq!(
            first_line_answer("Answer: Jean Bretagne Charles de La Trémoille"),
            "Jean Bretagne Charles de La Trémoille"
        );
        assert_eq!(first_line_answer("Paris\nbecause"), "Paris");
        assert_eq!(first_line_answer("\n  answer:  yes \nmore"), "yes");
        assert_eq!(first_line_answer(""), "");
    }

    #[test]
    fn synthesize_with_empty_memory() {
        let mut p = provider(vec![seg("first line\nsecond line", 0.0)]);
        let answer = synthesize_answer(
            &PromptSet::default(),
            "q",
            &MemoryStore::new(),
            None,
            &mut p,
            &PipelineConfig::default(),
        )
        .unwrap();
        assert_eq!(answer, "first line");
    }

    #[test]
    fn subquery_template() {
        let memory = MemoryStore::new();
        assert_eq!(form_subquery("Who?", &[], &memory, 100), "Who?");
        let one = [CandidateEntity::new("Jean Bretagne Charles", Some("father of"))];
        let q = form_subquery("Who?", &one, &memory, 100);
        assert!(q.contains("Jean Bretagne Charles") && q.contains("father of"));
        let two = [CandidateEntity::new("B", None), CandidateEntity::new("A", None)];
        let q = form_subquery("Who?", &two, &memory, 100);
        assert!(q.ends_with("Find: B; A"));
        let mut memory = MemoryStore::new();
        memory.upsert(MemoryRecord::new("Fact", None, 1.0, 0, MemorySource::Extraction));
        let q = form_subquery("Who?", &two, &memory, 100);
        assert_eq!(q, "Who?\nKnown facts:\n- Fact\nFind: B; A");
    }

    #[test]
    fn normalized_score_edges() {
        let hit = |s: f64| ScoredDoc {
            doc_id: "x".into(),
            score: s,
            rank: 1,
        };
        assert_eq!(normalized_scores(&[hit(2.0)]), vec![1.0]);
        assert_eq!(normalized_scores(&[hit(3.0), hit(2.0), hit(1.0)]), vec![1.0, 0.5, 0.0]);
        assert_eq!(normalized_scores(&[hit(1.0), hit(1.0)]), vec![1.0, 1.0]);
        assert!(normalized_scores(&[]).is_empty());
    }

    #[test]
    fn no_trigger_answers_immediately() {
        let index = index();
        let cfg = PipelineConfig::default();
        let prompts = PromptSet::default();
        let pipeline = Pipeline {
            index: &index,
            config: &cfg,
            prompts: &prompts,
        };
        let mut p = provider(vec![seg("flat segment here", 0.5), seg("Answer: done", 0.0)]);
        let trace = pipeline.run_question("q", &mut p).unwrap();
        assert_eq!(trace.hops.len(), 1);
        assert_eq!(trace.total_retrievals, 0);
        assert_eq!(trace.terminated_by, Termination::NoTrigger);
        assert_eq!(trace.final_answer, "done");
        assert_eq!(index.search_calls(), 0);
    }

    #[test]
    fn always_trigger_hits_max_hops() {
        let index = index();
        let cfg = PipelineConfig {
            max_hops: 2,
            filter: FilterConfig {
                mode: crate::filter::FilterMode::Conf,
                ..FilterConfig::default()
            },
            ..PipelineConfig::default()
        };
        let prompts = PromptSet::default();
        let pipeline = Pipeline {
            index: &index,
            config: &cfg,
            prompts: &prompts,
        };
        let mut p = provider(vec![
            spiky("ENTITY: alpha | RELATION: x\n"),
            spiky("ENTITY: beta\n"),
            seg("Answer: gamma", 0.0),
        ]);
        let trace = pipeline.run_question("q", &mut p).unwrap();
        assert_eq!(trace.hops.len(), 2);
        assert_eq!(trace.terminated_by, Termination::MaxHops);
        assert_eq!(trace.total_retrievals, 2);
        assert_eq!(trace.final_answer, "gamma");
        assert_eq!(p.calls(), 3);
        assert_eq!(index.search_calls(), 2);
    }

    #[test]
    fn trace_end_is_a_termination() {
        let index = index();
        let cfg = PipelineConfig {
            filter: FilterConfig {
                mode: crate::filter::FilterMode::NoFilter,
                ..FilterConfig::default()
            },
            ..PipelineConfig::default()
        };
        let prompts = PromptSet::default();
        let pipeline = Pipeline {
            index: &index,
            config: &cfg,
            prompts: &prompts,
        };
        let mut p = provider(vec![spiky("Answer: partial\nENTITY: beta\n")]);
        let trace = pipeline.run_question("q", &mut p).unwrap();
        assert_eq!(trace.terminated_by, Termination::TraceEnd);
        assert_eq!(trace.total_retrievals, 1);
        assert_eq!(trace.final_answer, "partial");
    }

    #[test]
    fn invalid_config_fails_with_empty_partial() {
        let index = index();
        let cfg = PipelineConfig {
            max_hops: 0,
            ..PipelineConfig::default()
        };
        let prompts = PromptSet::default();
        let pipeline = Pipeline {
            index: &index,
            config: &cfg,
            prompts: &prompts,
        };
        let err = pipeline.run_question("q", &mut provider(vec![])).unwrap_err();
        assert!(matches!(err.kind, PipelineErrorKind::Config(_)));
        assert!(err.partial.hops.is_empty());
    }

    #[test]
    fn cot_mode_consumes_a_validation_call() {
        let index = index();
        let cfg = PipelineConfig::default();
        let prompts = PromptSet::default();
        let pipeline = Pipeline {
            index: &index,
            config: &cfg,
            prompts: &prompts,
        };
        let mut p = provider(vec![
            spiky("ENTITY: alpha\nENTITY: beta\n"),
            seg("DROP: 1", 0.0),
            seg("settled now", 0.2),
            seg("Answer: beta", 0.0),
        ]);
        let trace = pipeline.run_question("q", &mut p).unwrap();
        assert_eq!(p.calls(), 4);
        let kept: Vec<_> = trace.hops[0].kept.iter().map(|e| e.surface.as_str()).collect();
        assert_eq!(kept, ["beta"]);
        assert!(trace.memory.iter().any(|r| r.key == "beta"));
        assert!(!trace
            .memory
            .iter()
            .any(|r| r.key == "alpha" && r.source == MemorySource::Extraction));
    }
}
