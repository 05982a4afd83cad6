//! Scripted scenarios for offline runs: a toy corpus, questions, and trace
//! files whose token signals are chosen by hand.
//!
//! [`grandfather_scenario`] is the two-retrieval bridging example used by the
//! golden test and the `multi_hop` example. [`chain_suite`] builds a
//! deterministic 20-question suite for benchmark and sweep demos.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use crate::dataset::{to_jsonl, AnswerType, QAExample};
use crate::gateway::{FinishReason, GenerationSegment, TraceFile, TraceRecord};
use crate::retriever::Document;

/// Splits text into word-ish tokens (each keeps its trailing space or
/// newline) and assigns every token `base` signals, except tokens whose
/// trimmed text appears in `spikes`.
pub fn scripted_segment(text: &str, base: (f64, f64), spikes: &[(&str, f64, f64)]) -> GenerationSegment {
    let mut tokens: Vec<&str> = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if c == ' ' || c == '\n' {
            tokens.push(&text[start..i + 1]);
            start = i + 1;
        }
    }
    if start < text.len() {
        tokens.push(&text[start..]);
    }
    GenerationSegment::from_tokens(
        tokens.into_iter().map(|t| {
            let (entropy, attn) = spikes
                .iter()
                .find(|(word, _, _)| *word == t.trim())
                .map(|&(_, h, a)| (h, a))
                .unwrap_or(base);
            (t, entropy, attn)
        }),
        FinishReason::Stop,
    )
}

pub fn trace_of(steps: Vec<(&str, GenerationSegment)>) -> TraceFile {
    TraceFile {
        records: steps
            .into_iter()
            .map(|(key, segment)| TraceRecord {
                step_key: key.to_string(),
                segment,
            })
            .collect(),
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub example: QAExample,
    pub corpus: Vec<Document>,
    pub trace: TraceFile,
}

pub const GRANDFATHER_QUESTION: &str = "Who is Charles Bretagne Marie De La Trémoille's paternal grandfather?";

pub fn grandfather_corpus() -> Vec<Document> {
    vec![
        Document::new(
            "d1",
            "Charles Bretagne Marie de La Trémoille",
            "Charles Bretagne Marie Joseph de La Trémoille (1764–1839) was a French soldier. \
             He was the son of Jean Bretagne Charles de La Trémoille, Duke of Thouars.",
        ),
        Document::new(
            "d2",
            "Jean Bretagne Charles de La Trémoille",
            "Jean Bretagne Charles Godefroy de La Trémoille (1737–1792) was Duke of Thouars. \
             His father was Charles Armand René de La Trémoille.",
        ),
        Document::new(
            "d3",
            "Charles Armand René de La Trémoille",
            "Charles Armand René de La Trémoille (1708–1741) was a French aristocrat and a member \
             of the Académie française.",
        ),
        Document::new(
            "d4",
            "Thouars",
            "Thouars is a commune in the Deux-Sèvres department of western France, long held by \
             the dukes of the La Trémoille family.",
        ),
        Document::new(
            "d5",
            "Académie française",
            "The Académie française is the council for matters pertaining to the French language, \
             founded in 1635.",
        ),
        Document::new(
            "d6",
            "Deux-Sèvres",
            "Deux-Sèvres is a department in western France named after two rivers called Sèvre.",
        ),
    ]
}

/// Three reasoning steps (two that trigger retrieval, one that does not)
/// followed by the answer step.
pub fn grandfather_scenario() -> Scenario {
    let hop1 = scripted_segment(
        "To find the paternal grandfather I first need the father of Charles Bretagne Marie de La Trémoille.\n\
         ENTITY: Charles Bretagne Marie de La Trémoille | RELATION: person asked about\n\
         ENTITY: paternal grandfather | RELATION: father of his father\n",
        (0.3, 0.2),
        &[("father", 2.4, 0.9), ("grandfather", 1.6, 0.7)],
    );
    let hop2 = scripted_segment(
        "The passage says his father was Jean Bretagne Charles de La Trémoille. \
         Now I need the father of Jean Bretagne Charles.\n\
         ENTITY: Jean Bretagne Charles | RELATION: father of Charles Bretagne Marie\n",
        (0.25, 0.15),
        &[("Jean", 0.2, 0.95), ("Now", 2.1, 0.4)],
    );
    let hop3 = scripted_segment(
        "Jean Bretagne Charles de La Trémoille was the son of Charles Armand René de La Trémoille, \
         who is therefore the paternal grandfather.",
        (0.4, 0.1),
        &[],
    );
    let answer = scripted_segment("Answer: Charles Armand René de La Trémoille", (0.05, 0.1), &[]);
    Scenario {
        example: QAExample {
            qid: "fig1".into(),
            question: GRANDFATHER_QUESTION.into(),
            gold_answers: vec!["Charles Armand René de La Trémoille".into()],
            answer_type: AnswerType::Span,
        },
        corpus: grandfather_corpus(),
        trace: trace_of(vec![("hop1", hop1), ("hop2", hop2), ("hop3", hop3), ("answer", answer)]),
    }
}

#[derive(Debug, Clone, Default)]
pub struct Suite {
    pub corpus: Vec<Document>,
    pub examples: Vec<QAExample>,
    pub traces: BTreeMap<String, TraceFile>,
}

impl Suite {
    /// Writes `corpus.jsonl`, `dataset.jsonl` and `traces/<qid>.jsonl`.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir.join("traces"))?;
        let corpus: String = self
            .corpus
            .iter()
            .map(|d| serde_json::to_string(d).expect("documents serialize") + "\n")
            .collect();
        fs::write(dir.join("corpus.jsonl"), corpus)?;
        fs::write(dir.join("dataset.jsonl"), to_jsonl(&self.examples))?;
        for (qid, trace) in &self.traces {
            fs::write(dir.join("traces").join(format!("{qid}.jsonl")), trace.to_jsonl())?;
        }
        Ok(())
    }
}

const CITIES: [&str; 5] = ["Arden", "Belmont", "Corvale", "Dunmore", "Eastwick"];

/// Twenty two-hop questions of the form "who founded the employer of X".
/// Question `i` triggers once or twice depending on `i % 3`, carries two
/// distractor entities with different signal strengths, and answers
/// correctly unless `i % 4 == 0`. Questions 18 and 19 are yes/no.
pub fn chain_suite() -> Suite {
    let mut suite = Suite::default();
    for i in 0..20 {
        let person = format!("Person{i:02} Hale");
        let company = format!("Company{i:02} Works");
        let founder = format!("Founder{i:02} Reyes");
        let city = CITIES[i % CITIES.len()];
        suite.corpus.push(Document::new(
            format!("p{i:02}"),
            person.clone(),
            format!("{person} is an engineer employed by {company} in {city}."),
        ));
        suite.corpus.push(Document::new(
            format!("c{i:02}"),
            company.clone(),
            format!("{company} was founded by {founder} and is based in {city}."),
        ));

        let qid = format!("q{i:02}");
        let yes_no = i >= 18;
        let (question, gold) = if yes_no {
            (
                format!("Was the employer of {person} founded by {founder}?"),
                "yes".to_string(),
            )
        } else {
            (
                format!("Who founded the company that employs {person}?"),
                founder.clone(),
            )
        };

        let mut steps = Vec::new();
        let spike = 1.5 + 0.1 * (i % 5) as f64;
        steps.push((
            "hop1",
            scripted_segment(
                &format!(
                    "I need the employer of {person} first.\n\
                     ENTITY: {person} | RELATION: employee\n\
                     ENTITY: {city} | RELATION: location\n\
                     ENTITY: engineer | RELATION: occupation\n"
                ),
                (0.3, 0.2),
                &[("employer", spike, 0.8), (city, 1.2, 0.1), ("engineer", 2.8, 0.05)],
            ),
        ));
        if i % 3 != 0 {
            steps.push((
                "hop2",
                scripted_segment(
                    &format!(
                        "{person} works at {company}. Who founded it?\n\
                         ENTITY: {company} | RELATION: employer\n"
                    ),
                    (0.35, 0.25),
                    &[("founded", 1.9, 0.6)],
                ),
            ));
        }
        steps.push((
            "final",
            scripted_segment(
                &format!("{company} was founded by {founder}, which settles the question."),
                (0.5, 0.1),
                &[],
            ),
        ));
        let answer = match (yes_no, i % 4 == 0) {
            (true, _) => "Answer: yes".to_string(),
            (false, false) => format!("Answer: {founder}"),
            (false, true) => format!("Answer: {person}"),
        };
        steps.push(("answer", scripted_segment(&answer, (0.05, 0.1), &[])));

        suite.examples.push(QAExample {
            qid: qid.clone(),
            question,
            gold_answers: vec![gold],
            answer_type: if yes_no { AnswerType::YesNo } else { AnswerType::Span },
        });
        suite.traces.insert(qid, trace_of(steps));
    }
    suite
}
