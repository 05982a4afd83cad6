//! The unified question file and converters from upstream benchmark formats.
//!
//! Unified records are newline-delimited:
//!
//! ```text
//! {"qid": "...", "question": "...", "answers": ["..."], "answer_type": "span" | "yes_no"}
//! ```

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::metrics::normalize_answer;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("record {index}: {message}")]
    BadRecord { index: usize, message: String },
    #[error("unknown benchmark format {0:?} (expected hotpotqa, 2wiki, strategyqa or iirc)")]
    UnknownFormat(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerType {
    Span,
    #[serde(alias = "yesno")]
    YesNo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAExample {
    pub qid: String,
    pub question: String,
    #[serde(rename = "answers")]
    pub gold_answers: Vec<String>,
    pub answer_type: AnswerType,
}

impl QAExample {
    pub fn validate(&self) -> Result<(), String> {
        if self.gold_answers.is_empty() {
            return Err(format!("{}: no gold answers", self.qid));
        }
        if self.answer_type == AnswerType::YesNo {
            if let Some(bad) = self
                .gold_answers
                .iter()
                .find(|g| !matches!(normalize_answer(g).as_str(), "yes" | "no"))
            {
                return Err(format!("{}: yes/no example has gold {bad:?}", self.qid));
            }
        }
        Ok(())
    }
}

pub fn parse_dataset(content: &str) -> Result<Vec<QAExample>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let example: QAExample = serde_json::from_str(line).map_err(|e| DatasetError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        example
            .validate()
            .map_err(|message| DatasetError::Malformed { line: i + 1, message })?;
        out.push(example);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<QAExample>, DatasetError> {
    let content = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&content)
}

pub fn to_jsonl(examples: &[QAExample]) -> String {
    examples
        .iter()
        .map(|e| serde_json::to_string(e).expect("examples serialize") + "\n")
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchmarkFormat {
    HotpotQa,
    TwoWiki,
    StrategyQa,
    Iirc,
}

impl FromStr for BenchmarkFormat {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hotpotqa" | "hotpot" => Ok(Self::HotpotQa),
            "2wiki" | "2wikimultihopqa" => Ok(Self::TwoWiki),
            "strategyqa" | "strategy" => Ok(Self::StrategyQa),
            "iirc" => Ok(Self::Iirc),
            other => Err(DatasetError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Conversion {
    pub examples: Vec<QAExample>,
    /// Upstream questions with no usable answer (e.g. unanswerable IIRC items).
    pub skipped: usize,
}

/// Accepts either a JSON array or newline-delimited JSON objects.
fn upstream_records(content: &str) -> Result<Vec<Value>, DatasetError> {
    let trimmed = content.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed).map_err(|e| DatasetError::Malformed {
            line: e.line(),
            message: e.to_string(),
        });
    }
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| DatasetError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn str_field<'a>(record: &'a Value, keys: &[&str], index: usize) -> Result<&'a str, DatasetError> {
    keys.iter()
        .find_map(|k| record.get(*k).and_then(Value::as_str))
        .ok_or_else(|| DatasetError::BadRecord {
            index,
            message: format!("missing string field {}", keys.join("/")),
        })
}

fn span_or_yesno(qid: &str, question: &str, answer: &str) -> QAExample {
    let answer_type = match normalize_answer(answer).as_str() {
        "yes" | "no" => AnswerType::YesNo,
        _ => AnswerType::Span,
    };
    QAExample {
        qid: qid.to_string(),
        question: question.to_string(),
        gold_answers: vec![answer.to_string()],
        answer_type,
    }
}

pub fn convert(format: BenchmarkFormat, content: &str) -> Result<Conversion, DatasetError> {
    let records = upstream_records(content)?;
    let mut out = Conversion::default();
    for (index, record) in records.iter().enumerate() {
        match format {
            BenchmarkFormat::HotpotQa | BenchmarkFormat::TwoWiki => {
                let qid = str_field(record, &["_id", "id", "qid"], index)?;
                let question = str_field(record, &["question"], index)?;
                let answer = str_field(record, &["answer"], index)?;
                out.examples.push(span_or_yesno(qid, question, answer));
            }
            BenchmarkFormat::StrategyQa => {
                let qid = str_field(record, &["qid", "id"], index)?;
                let question = str_field(record, &["question"], index)?;
                let answer = match record.get("answer") {
                    Some(Value::Bool(true)) => "yes",
                    Some(Value::Bool(false)) => "no",
                    _ => {
                        return Err(DatasetError::BadRecord {
                            index,
                            message: "answer must be a boolean".into(),
                        })
                    }
                };
                out.examples.push(QAExample {
                    qid: qid.to_string(),
                    question: question.to_string(),
                    gold_answers: vec![answer.to_string()],
                    answer_type: AnswerType::YesNo,
                });
            }
            BenchmarkFormat::Iirc => {
                let questions =
                    record
                        .get("questions")
                        .and_then(Value::as_array)
                        .ok_or_else(|| DatasetError::BadRecord {
                            index,
                            message: "missing questions array".into(),
                        })?;
                for q in questions {
                    let qid = str_field(q, &["qid", "id"], index)?;
                    let question = str_field(q, &["question"], index)?;
                    match iirc_answers(q.get("answer")) {
                        Some((answers, answer_type)) => out.examples.push(QAExample {
                            qid: qid.to_string(),
                            question: question.to_string(),
                            gold_answers: answers,
                            answer_type,
                        }),
                        None => out.skipped += 1,
                    }
                }
            }
        }
    }
    Ok(out)
}

fn iirc_answers(answer: Option<&Value>) -> Option<(Vec<String>, AnswerType)> {
    let answer = answer?;
    match answer.get("type").and_then(Value::as_str)? {
        "span" => {
            let spans: Vec<String> = answer
                .get("answer_spans")?
                .as_array()?
                .iter()
                .filter_map(|s| s.get("text").and_then(Value::as_str))
                .map(str::to_string)
                .collect();
            (!spans.is_empty()).then(|| (vec![spans.join(" ")], AnswerType::Span))
        }
        "binary" => {
            let value = answer.get("answer_value")?.as_str()?;
            Some((vec![value.to_string()], AnswerType::YesNo))
        }
        "value" => {
            let value = answer.get("answer_value")?.as_str()?;
            let unit = answer.get("answer_unit").and_then(Value::as_str).unwrap_or("");
            let mut golds = vec![value.to_string()];
            if !unit.is_empty() {
                golds.push(format!("{value} {unit}"));
            }
            Some((golds, AnswerType::Span))
        }
        _ => None,
    }
}
