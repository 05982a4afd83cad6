//! Generation backends.
//!
//! A [`Generator`] turns a prompt into a [`GenerationSegment`]: decoded text
//! plus one [`TokenEvent`] per token. Two backends are provided:
//!
//! - [`TraceProvider`] replays a recorded trace file in call order, which makes
//!   every pipeline run reproducible offline.
//! - [`SidecarClient`] streams tokens from the inference sidecar over HTTP and
//!   folds its per-step attention rows into per-token `max_attn`.
//!
//! [`RecordingGenerator`] wraps either one and captures what it returns so a
//! live session can be saved and replayed later.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signals::{fold_future_attention, validate_segment, TokenEvent};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("trace exhausted after {0} records")]
    TraceExhausted(usize),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("trace line {line}: {message}")]
    TraceParse { line: usize, message: String },
    #[error("duplicate step_key {0:?}")]
    DuplicateStepKey(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_tokens: usize,
    #[serde(rename = "stop")]
    pub stop_sequences: Vec<String>,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, max_tokens: usize) -> Self {
        Self {
            prompt: prompt.into(),
            max_tokens,
            stop_sequences: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    TraceEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSegment {
    pub text: String,
    pub events: Vec<TokenEvent>,
    pub finish_reason: FinishReason,
}

impl GenerationSegment {
    /// Builds a segment from token texts and their signals; the segment text is
    /// the concatenation of the token texts.
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = (&'a str, f64, f64)>, finish_reason: FinishReason) -> Self {
        let events: Vec<TokenEvent> = tokens
            .into_iter()
            .enumerate()
            .map(|(index, (text, entropy, max_attn))| TokenEvent {
                index,
                text: text.to_string(),
                entropy,
                max_attn,
            })
            .collect();
        let text = events.iter().map(|e| e.text.as_str()).collect();
        Self {
            text,
            events,
            finish_reason,
        }
    }

    /// Event invariants plus `concat(event texts) == text`.
    pub fn validate(&self) -> Result<(), String> {
        validate_segment(&self.events).map_err(|e| e.to_string())?;
        let joined: String = self.events.iter().map(|e| e.text.as_str()).collect();
        if joined != self.text {
            return Err("concatenated event texts differ from segment text".into());
        }
        Ok(())
    }
}

/// The provider contract.
pub trait Generator: Send {
    fn generate(&mut self, request: &GenerationRequest) -> Result<GenerationSegment, GatewayError>;
}

impl<G: Generator + ?Sized> Generator for Box<G> {
    fn generate(&mut self, request: &GenerationRequest) -> Result<GenerationSegment, GatewayError> {
        (**self).generate(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step_key: String,
    #[serde(flatten)]
    pub segment: GenerationSegment,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceFile {
    pub records: Vec<TraceRecord>,
}

impl TraceFile {
    pub fn parse(content: &str) -> Result<Self, GatewayError> {
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in content.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let record: TraceRecord = serde_json::from_str(line).map_err(|e| GatewayError::TraceParse {
                line: line_no,
                message: e.to_string(),
            })?;
            record
                .segment
                .validate()
                .map_err(|message| GatewayError::TraceParse { line: line_no, message })?;
            if !seen.insert(record.step_key.clone()) {
                return Err(GatewayError::DuplicateStepKey(record.step_key));
            }
            records.push(record);
        }
        Ok(Self { records })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), GatewayError> {
        fs::write(path, self.to_jsonl()).map_err(|source| GatewayError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

pub fn load_trace(path: &Path) -> Result<TraceFile, GatewayError> {
    let content = fs::read_to_string(path).map_err(|source| GatewayError::Io {
        path: path.display().to_string(),
        source,
    })?;
    TraceFile::parse(&content)
}

/// Replays trace records in call order, ignoring prompt content.
#[derive(Debug, Clone)]
pub struct TraceProvider {
    trace: TraceFile,
    cursor: usize,
}

impl TraceProvider {
    pub fn new(trace: TraceFile) -> Self {
        Self { trace, cursor: 0 }
    }

    pub fn from_path(path: &Path) -> Result<Self, GatewayError> {
        load_trace(path).map(Self::new)
    }

    /// Number of records consumed so far.
    pub fn calls(&self) -> usize {
        self.cursor
    }

    pub fn remaining(&self) -> usize {
        self.trace.records.len() - self.cursor
    }
}

impl Generator for TraceProvider {
    fn generate(&mut self, request: &GenerationRequest) -> Result<GenerationSegment, GatewayError> {
        request.validate()?;
        let record = self
            .trace
            .records
            .get(self.cursor)
            .ok_or(GatewayError::TraceExhausted(self.trace.records.len()))?;
        self.cursor += 1;
        Ok(record.segment.clone())
    }
}

/// Records every segment returned by the wrapped generator.
pub struct RecordingGenerator<G> {
    inner: G,
    recorded: TraceFile,
}

impl<G: Generator> RecordingGenerator<G> {
    pub fn new(inner: G) -> Self {
        Self {
            inner,
            recorded: TraceFile::default(),
        }
    }

    pub fn trace(&self) -> &TraceFile {
        &self.recorded
    }

    pub fn into_trace(self) -> TraceFile {
        self.recorded
    }
}

impl<G: Generator> Generator for RecordingGenerator<G> {
    fn generate(&mut self, request: &GenerationRequest) -> Result<GenerationSegment, GatewayError> {
        let segment = self.inner.generate(request)?;
        self.recorded.records.push(TraceRecord {
            step_key: format!("step{}", self.recorded.records.len() + 1),
            segment: segment.clone(),
        });
        Ok(segment)
    }
}

/// One streamed line from the sidecar: a token event or the terminal record.
#[derive(Debug, Deserialize)]
struct WireRecord {
    index: Option<usize>,
    text: Option<String>,
    entropy: Option<f64>,
    #[serde(default)]
    attn_to_past: BTreeMap<String, f64>,
    finish_reason: Option<String>,
    message: Option<String>,
}

/// Streaming client for the inference sidecar's `POST /generate`.
pub struct SidecarClient {
    base_url: String,
    http: reqwest::blocking::Client,
    max_attempts: usize,
    backoff: Duration,
}

impl SidecarClient {
    pub fn new(base_url: impl Into<String>) -> Result<Self, GatewayError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(600))
            .build()
            .map_err(|e| GatewayError::BackendUnreachable(e.to_string()))?;
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            http,
            max_attempts: 4,
            backoff: Duration::from_millis(250),
        })
    }

    pub fn with_retry(mut self, max_attempts: usize, backoff: Duration) -> Self {
        self.max_attempts = max_attempts.max(1);
        self.backoff = backoff;
        self
    }

    /// `GET /health`; returns the reported model id when ready.
    pub fn health(&self) -> Result<String, GatewayError> {
        let response = self
            .http
            .get(format!("{}/health", self.base_url))
            .send()
            .map_err(|e| GatewayError::BackendUnreachable(e.to_string()))?;
        let status = response.status();
        let body = response
            .text()
            .map_err(|e| GatewayError::BackendUnreachable(e.to_string()))?;
        if !status.is_success() {
            return Err(GatewayError::Backend(format!("health returned {status}: {body}")));
        }
        let value: serde_json::Value =
            serde_json::from_str(&body).map_err(|e| GatewayError::ProtocolViolation(format!("health body: {e}")))?;
        Ok(value
            .get("model_id")
            .and_then(|m| m.as_str())
            .unwrap_or_default()
            .to_string())
    }

    fn open_stream(&self, request: &GenerationRequest) -> Result<reqwest::blocking::Response, GatewayError> {
        let body = serde_json::to_string(request).expect("request serializes");
        let mut last_status = None;
        for attempt in 0..self.max_attempts {
            if attempt > 0 {
                thread::sleep(self.backoff * attempt as u32);
            }
            let response = self
                .http
                .post(format!("{}/generate", self.base_url))
                .header("content-type", "application/json")
                .body(body.clone())
                .send()
                .map_err(|e| GatewayError::BackendUnreachable(e.to_string()))?;
            let status = response.status().as_u16();
            match status {
                200..=299 => return Ok(response),
                // Busy or still loading: retryable.
                429 | 503 => last_status = Some(status),
                _ => {
                    let text = response.text().unwrap_or_default();
                    return Err(GatewayError::Backend(format!("status {status}: {text}")));
                }
            }
        }
        Err(GatewayError::BackendUnreachable(format!(
            "gave up after {} attempts (last status {:?})",
            self.max_attempts, last_status
        )))
    }
}

impl Generator for SidecarClient {
    fn generate(&mut self, request: &GenerationRequest) -> Result<GenerationSegment, GatewayError> {
        request.validate()?;
        let response = self.open_stream(request)?;
        decode_stream(BufReader::new(response))
    }
}

/// Decodes the newline-delimited sidecar stream into a segment.
pub fn decode_stream(reader: impl BufRead) -> Result<GenerationSegment, GatewayError> {
    let mut texts = Vec::new();
    let mut entropies = Vec::new();
    let mut rows = Vec::new();
    let mut finish = None;
    for line in reader.lines() {
        let line = line.map_err(|e| GatewayError::BackendUnreachable(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        if finish.is_some() {
            return Err(GatewayError::ProtocolViolation("record after terminal record".into()));
        }
        let record: WireRecord =
            serde_json::from_str(&line).map_err(|e| GatewayError::ProtocolViolation(format!("bad record: {e}")))?;
        if let Some(reason) = record.finish_reason {
            finish = Some(match reason.as_str() {
                "stop" => FinishReason::Stop,
                "length" => FinishReason::Length,
                "error" => {
                    return Err(GatewayError::Backend(
                        record.message.unwrap_or_else(|| "unspecified".into()),
                    ))
                }
                other => {
                    return Err(GatewayError::ProtocolViolation(format!(
                        "unknown finish_reason {other:?}"
                    )))
                }
            });
            continue;
        }
        let (Some(index), Some(text), Some(entropy)) = (record.index, record.text, record.entropy) else {
            return Err(GatewayError::ProtocolViolation(
                "event record missing index, text or entropy".into(),
            ));
        };
        if index != texts.len() {
            return Err(GatewayError::ProtocolViolation(format!(
                "event index {index}, expected {}",
                texts.len()
            )));
        }
        if entropy < 0.0 || !entropy.is_finite() {
            return Err(GatewayError::ProtocolViolation(format!("negative entropy {entropy}")));
        }
        let mut row = Vec::with_capacity(record.attn_to_past.len());
        for (key, weight) in record.attn_to_past {
            let past: usize = key
                .parse()
                .map_err(|_| GatewayError::ProtocolViolation(format!("attention key {key:?} is not an index")))?;
            row.push((past, weight));
        }
        texts.push(text);
        entropies.push(entropy);
        rows.push(row);
    }
    let finish_reason =
        finish.ok_or_else(|| GatewayError::ProtocolViolation("stream ended without terminal record".into()))?;
    let max_attn =
        fold_future_attention(texts.len(), &rows).map_err(|e| GatewayError::ProtocolViolation(e.to_string()))?;
    let events: Vec<TokenEvent> = texts
        .into_iter()
        .zip(entropies)
        .zip(max_attn)
        .enumerate()
        .map(|(index, ((text, entropy), max_attn))| TokenEvent {
            index,
            text,
            entropy,
            max_attn,
        })
        .collect();
    let text = events.iter().map(|e| e.text.as_str()).collect();
    Ok(GenerationSegment {
        text,
        events,
        finish_reason,
    })
}
