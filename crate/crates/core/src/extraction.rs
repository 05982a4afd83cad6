//! Entity extraction: prompt construction, line-grammar parsing, token-span
//! alignment and chain-of-thought consistency validation.
//!
//! The model is asked to emit one entity per line:
//!
//! ```text
//! ENTITY: <surface> | RELATION: <relation>
//! ```
//!
//! with the relation clause optional. Lines that do not follow the grammar are
//! skipped and counted.

use serde::{Deserialize, Serialize};

use crate::gateway::{GatewayError, GenerationRequest, GenerationSegment, Generator};
use crate::prompts::{render, PromptSet};

const ENTITY_TAG: &str = "ENTITY:";
const RELATION_TAG: &str = "RELATION:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntity {
    pub surface: String,
    pub relation: Option<String>,
    /// Token span `[start, end)` into the segment the entity was extracted from.
    pub span: Option<(usize, usize)>,
    pub confidence: Option<f64>,
}

impl CandidateEntity {
    pub fn new(surface: impl Into<String>, relation: Option<&str>) -> Self {
        Self {
            surface: surface.into(),
            relation: relation.map(str::to_string),
            span: None,
            confidence: None,
        }
    }

    pub fn key(&self) -> String {
        fold_key(&self.surface)
    }
}

/// Case-folds, trims and collapses whitespace runs to one space.
pub fn fold_key(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn build_extraction_prompt(prompts: &PromptSet, question: &str, context: &str) -> String {
    let context_block = if context.trim().is_empty() {
        String::new()
    } else {
        format!("Context:\n{context}\n\n")
    };
    render(
        &prompts.extraction,
        &[("question", question), ("context", &context_block)],
    )
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedEntities {
    pub entities: Vec<CandidateEntity>,
    /// Non-blank lines that did not match the grammar.
    pub skipped: usize,
}

pub fn parse_extraction_output(text: &str) -> ParsedEntities {
    let mut parsed = ParsedEntities::default();
    let mut seen = std::collections::HashSet::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match parse_entity_line(line) {
            Some(entity) => {
                if seen.insert(entity.key()) {
                    parsed.entities.push(entity);
                }
            }
            None => parsed.skipped += 1,
        }
    }
    parsed
}

fn parse_entity_line(line: &str) -> Option<CandidateEntity> {
    let body = line.strip_prefix(ENTITY_TAG)?;
    let (surface, relation) = match body.split_once('|') {
        Some((surface, rest)) => {
            let relation = rest.trim().strip_prefix(RELATION_TAG)?.trim();
            (surface.trim(), (!relation.is_empty()).then_some(relation))
        }
        None => (body.trim(), None),
    };
    if surface.is_empty() {
        return None;
    }
    Some(CandidateEntity::new(surface, relation))
}

/// Serializes entities back into the line grammar.
pub fn format_entities(entities: &[CandidateEntity]) -> String {
    entities
        .iter()
        .map(|e| match &e.relation {
            Some(r) => format!("{ENTITY_TAG} {} | {RELATION_TAG} {r}\n", e.surface),
            None => format!("{ENTITY_TAG} {}\n", e.surface),
        })
        .collect()
}

/// Sets each entity's span to the tightest token range covering a
/// case-insensitive, whitespace-normalized occurrence of its surface: the
/// occurrence ending in the earliest token wins, then the latest start.
pub fn align_spans(entities: &[CandidateEntity], segment: &GenerationSegment) -> Vec<CandidateEntity> {
    let (haystack, owners) = normalized_with_owners(segment);
    entities
        .iter()
        .map(|entity| {
            let needle: Vec<char> = fold_key(&entity.surface).chars().collect();
            let span = match_starts(&haystack, &needle)
                .map(|start| (owners[start], owners[start + needle.len() - 1] + 1))
                .min_by_key(|&(s, e)| (e, std::cmp::Reverse(s)));
            CandidateEntity { span, ..entity.clone() }
        })
        .collect()
}

fn normalized_with_owners(segment: &GenerationSegment) -> (Vec<char>, Vec<usize>) {
    let mut chars = Vec::with_capacity(segment.text.len());
    let mut owners = Vec::with_capacity(segment.text.len());
    for (token, event) in segment.events.iter().enumerate() {
        for c in event.text.chars() {
            if c.is_whitespace() {
                if chars.last().is_some_and(|last| *last != ' ') {
                    chars.push(' ');
                    owners.push(token);
                }
            } else {
                for lower in c.to_lowercase() {
                    chars.push(lower);
                    owners.push(token);
                }
            }
        }
    }
    (chars, owners)
}

fn match_starts<'a>(haystack: &'a [char], needle: &'a [char]) -> impl Iterator<Item = usize> + 'a {
    let width = if needle.is_empty() {
        haystack.len() + 1
    } else {
        needle.len()
    };
    haystack
        .windows(width)
        .enumerate()
        .filter(move |(_, w)| *w == needle)
        .map(|(i, _)| i)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Keep,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CotVerdicts {
    pub verdicts: Vec<Verdict>,
    /// Verdict lines naming an entity number outside `1..=n`.
    pub out_of_range: usize,
}

impl CotVerdicts {
    pub fn keep_mask(&self) -> Vec<bool> {
        self.verdicts.iter().map(|v| *v == Verdict::Keep).collect()
    }
}

pub fn build_validation_prompt(
    prompts: &PromptSet,
    question: &str,
    reasoning: &str,
    entities: &[CandidateEntity],
) -> String {
    let listing: String = entities
        .iter()
        .enumerate()
        .map(|(i, e)| match &e.relation {
            Some(r) => format!("{}. {} ({r})\n", i + 1, e.surface),
            None => format!("{}. {}\n", i + 1, e.surface),
        })
        .collect();
    render(
        &prompts.validation,
        &[("question", question), ("reasoning", reasoning), ("entities", &listing)],
    )
}

/// Parses `KEEP: <n>` / `DROP: <n>` lines (1-based). The first verdict for an
/// entity wins; entities without one are kept.
pub fn parse_verdicts(text: &str, entity_count: usize) -> CotVerdicts {
    let mut verdicts: Vec<Option<Verdict>> = vec![None; entity_count];
    let mut out_of_range = 0;
    for line in text.lines() {
        let line = line.trim();
        let (verdict, number) = if let Some(rest) = line.strip_prefix("KEEP:") {
            (Verdict::Keep, rest)
        } else if let Some(rest) = line.strip_prefix("DROP:") {
            (Verdict::Drop, rest)
        } else {
            continue;
        };
        let Ok(n) = number.trim().parse::<usize>() else {
            continue;
        };
        match n.checked_sub(1).and_then(|i| verdicts.get_mut(i)) {
            Some(slot) => {
                slot.get_or_insert(verdict);
            }
            None => out_of_range += 1,
        }
    }
    CotVerdicts {
        verdicts: verdicts.into_iter().map(|v| v.unwrap_or(Verdict::Keep)).collect(),
        out_of_range,
    }
}

/// Asks the model to check each entity against the question and reasoning.
pub fn cot_validate<G: Generator + ?Sized>(
    prompts: &PromptSet,
    entities: &[CandidateEntity],
    question: &str,
    reasoning: &GenerationSegment,
    provider: &mut G,
    max_tokens: usize,
) -> Result<CotVerdicts, GatewayError> {
    let prompt = build_validation_prompt(prompts, question, &reasoning.text, entities);
    let reply = provider.generate(&GenerationRequest::new(prompt, max_tokens))?;
    Ok(parse_verdicts(&reply.text, entities.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{FinishReason, TraceFile, TraceProvider, TraceRecord};
    use proptest::prelude::*;

    fn segment(tokens: &[&str]) -> GenerationSegment {
        GenerationSegment::from_tokens(tokens.iter().map(|t| (*t, 0.0, 0.0)), FinishReason::Stop)
    }

    /// Brute force: the earliest-starting token span whose normalized
    /// concatenation contains the surface and that cannot be shrunk.
    fn oracle_span(surface: &str, tokens: &[&str]) -> Option<(usize, usize)> {
        let needle = fold_key(surface);
        if needle.is_empty() {
            return None;
        }
        let contains = |s: usize, e: usize| fold_key(&tokens[s..e].concat()).contains(&needle);
        for e in 1..=tokens.len() {
            // Smallest end first, then the latest start that still matches.
            if let Some(s) = (0..e).rev().find(|&s| contains(s, e)) {
                return Some((s, e));
            }
        }
        None
    }

    #[test]
    fn prompt_contains_instruction_and_question() {
        let prompts = PromptSet::default();
        let p = build_extraction_prompt(&prompts, "Who is X's grandfather?", "");
        assert!(p.contains("Extract any names, events, or relationships that might be relevant to answering"));
        assert!(p.contains("Question: Who is X's grandfather?"));
        assert!(!p.contains("Context:"));
        let with_ctx = build_extraction_prompt(&prompts, "Who is X's grandfather?", "passage A");
        assert!(with_ctx.contains("Context:\npassage A\n"));
        let multi = build_extraction_prompt(&prompts, "line one\nline two", "");
        assert!(multi.contains("Question: line one\nline two"));
    }

    #[test]
    fn parse_grammar_examples() {
        let p = parse_extraction_output("ENTITY: Jean Bretagne Charles | RELATION: father of");
        assert_eq!(
            p.entities,
            vec![CandidateEntity::new("Jean Bretagne Charles", Some("father of"))]
        );
        let p = parse_extraction_output("ENTITY: Paris\nENTITY: paris");
        assert_eq!(p.entities.len(), 1);
        assert_eq!(p.entities[0].surface, "Paris");
        let p = parse_extraction_output("no markup here");
        assert!(p.entities.is_empty());
        assert_eq!(p.skipped, 1);
    }

    #[test]
    fn parse_edge_cases() {
        let p = parse_extraction_output("  ENTITY:   Lyon   |  RELATION:  \nENTITY: |RELATION: x\nENTITY: A | other");
        assert_eq!(p.entities, vec![CandidateEntity::new("Lyon", None)]);
        assert_eq!(p.skipped, 2);
    }

    #[test]
    fn align_examples() {
        let seg = segment(&["Par", "is", " won"]);
        let out = align_spans(&[CandidateEntity::new("Paris", None)], &seg);
        assert_eq!(out[0].span, Some((0, 2)));
        assert_eq!(oracle_span("Paris", &["Par", "is", " won"]), Some((0, 2)));

        let out = align_spans(&[CandidateEntity::new("Lyon", None)], &seg);
        assert_eq!(out[0].span, None);

        let out = align_spans(&[CandidateEntity::new("paris won", None)], &seg);
        assert_eq!(out[0].span, Some((0, 3)));
    }

    #[test]
    fn align_normalizes_whitespace_and_case() {
        let seg = segment(&["The", " JEAN", "\n\n", "Bretagne", " line"]);
        let out = align_spans(&[CandidateEntity::new("jean  bretagne", None)], &seg);
        assert_eq!(out[0].span, Some((1, 4)));
        assert_eq!(
            oracle_span("jean  bretagne", &["The", " JEAN", "\n\n", "Bretagne", " line"]),
            Some((1, 4))
        );
    }

    #[test]
    fn verdict_examples() {
        assert_eq!(parse_verdicts("KEEP: 1\nDROP: 2", 2).keep_mask(), vec![true, false]);
        assert_eq!(parse_verdicts("", 2).keep_mask(), vec![true, true]);
        let v = parse_verdicts("DROP: 5\nDROP: 0", 2);
        assert_eq!(v.keep_mask(), vec![true, true]);
        assert_eq!(v.out_of_range, 2);
        assert_eq!(parse_verdicts("DROP: 1\nKEEP: 1", 1).keep_mask(), vec![false]);
    }

    #[test]
    fn cot_validate_issues_one_prompt() {
        let reply =
            GenerationSegment::from_tokens([("KEEP: 1\n", 0.0, 0.0), ("DROP: 2", 0.0, 0.0)], FinishReason::Stop);
        let mut provider = TraceProvider::new(TraceFile {
            records: vec![TraceRecord {
                step_key: "v".into(),
                segment: reply,
            }],
        });
        let entities = [CandidateEntity::new("A", None), CandidateEntity::new("B", Some("r"))];
        let verdicts = cot_validate(
            &PromptSet::default(),
            &entities,
            "q",
            &segment(&["reason"]),
            &mut provider,
            32,
        )
        .unwrap();
        assert_eq!(verdicts.keep_mask(), vec![true, false]);
        assert_eq!(provider.calls(), 1);
        let prompt = build_validation_prompt(&PromptSet::default(), "q", "reason", &entities);
        assert!(prompt.contains("1. A\n2. B (r)\n"));
    }

    fn word() -> impl Strategy<Value = String> {
        "[A-Za-z]{1,6}"
    }

    proptest! {
        #[test]
        fn parse_is_idempotent_on_formatted_output(
            items in prop::collection::vec((word(), prop::option::of(word())), 0..8)
        ) {
            let text: String = items
                .iter()
                .map(|(s, r)| match r {
                    Some(r) => format!("ENTITY: {s} | RELATION: {r}\nnoise\n"),
                    None => format!("ENTITY: {s}\n"),
                })
                .collect();
            let first = parse_extraction_output(&text).entities;
            let second = parse_extraction_output(&format_entities(&first)).entities;
            prop_assert_eq!(&first, &second);
            let keys: std::collections::HashSet<_> = first.iter().map(|e| e.key()).collect();
            prop_assert_eq!(keys.len(), first.len());
        }

        #[test]
        fn spans_match_brute_force(
            tokens in prop::collection::vec("[a-c ]{1,3}", 1..12),
            start in 0usize..12,
            len in 1usize..4,
        ) {
            let refs: Vec<&str> = tokens.iter().map(String::as_str).collect();
            let s = start % refs.len();
            let e = (s + len).min(refs.len());
            let surface = refs[s..e].concat();
            let seg = segment(&refs);
            let out = align_spans(&[CandidateEntity::new(surface.clone(), None)], &seg);
            let expected = oracle_span(&surface, &refs);
            prop_assert_eq!(out[0].span, expected);
            if let Some((a, b)) = out[0].span {
                prop_assert!(a < b && b <= refs.len());
            }
        }
    }
}
