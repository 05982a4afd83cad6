//! Benchmark runs, aggregate reports and hyperparameter sweeps.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{AnswerType, QAExample};
use crate::gateway::{GatewayError, Generator, SidecarClient, TraceProvider};
use crate::metrics::{exact_match, token_f1, token_precision, yesno_accuracy};
use crate::orchestrator::{HopTrace, Pipeline, PipelineConfig, PipelineErrorKind, Termination};
use crate::prompts::PromptSet;
use crate::retriever::InvertedIndex;
use crate::signals::TriggerConfig;

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("provider spec {0:?}: expected trace:<dir> or sidecar:<url>")]
    BadProviderSpec(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Where generation comes from: a directory of per-question trace files
/// (`<dir>/<qid>.jsonl`) or a live sidecar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderSpec {
    TraceDir(PathBuf),
    Sidecar(String),
}

impl FromStr for ProviderSpec {
    type Err = BenchmarkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(dir) = s.strip_prefix("trace:") {
            Ok(Self::TraceDir(PathBuf::from(dir)))
        } else if let Some(url) = s.strip_prefix("sidecar:") {
            Ok(Self::Sidecar(url.to_string()))
        } else {
            Err(BenchmarkError::BadProviderSpec(s.to_string()))
        }
    }
}

impl fmt::Display for ProviderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TraceDir(dir) => write!(f, "trace:{}", dir.display()),
            Self::Sidecar(url) => write!(f, "sidecar:{url}"),
        }
    }
}

impl ProviderSpec {
    pub fn open(&self, qid: &str) -> Result<Box<dyn Generator>, GatewayError> {
        match self {
            Self::TraceDir(dir) => Ok(Box::new(TraceProvider::from_path(&dir.join(format!("{qid}.jsonl")))?)),
            Self::Sidecar(url) => Ok(Box::new(SidecarClient::new(url.clone())?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleResult {
    pub qid: String,
    pub prediction: String,
    pub em: f64,
    pub f1: f64,
    pub precision: f64,
    /// Present for yes/no examples only.
    pub accuracy: Option<f64>,
    pub retrievals: usize,
    pub hops: usize,
    pub terminated_by: Option<Termination>,
    /// Set when the pipeline failed; such examples are left out of aggregates.
    pub error: Option<String>,
    #[serde(skip)]
    pub failure: Option<FailureClass>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureClass {
    Provider,
    Data,
    Config,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub examples: usize,
    pub scored: usize,
    pub failed: usize,
    pub em: f64,
    pub f1: f64,
    pub precision: f64,
    pub accuracy: Option<f64>,
    pub mean_retrievals: f64,
}

impl Aggregates {
    /// Arithmetic means over non-failed results; EM, F1, precision and accuracy in percent.
    pub fn from_results(results: &[ExampleResult]) -> Self {
        let scored: Vec<&ExampleResult> = results.iter().filter(|r| r.error.is_none()).collect();
        let mean = |values: Vec<f64>| {
            if values.is_empty() {
                0.0
            } else {
                values.iter().sum::<f64>() / values.len() as f64
            }
        };
        let accuracies: Vec<f64> = scored.iter().filter_map(|r| r.accuracy).collect();
        Self {
            examples: results.len(),
            scored: scored.len(),
            failed: results.len() - scored.len(),
            em: 100.0 * mean(scored.iter().map(|r| r.em).collect()),
            f1: 100.0 * mean(scored.iter().map(|r| r.f1).collect()),
            precision: 100.0 * mean(scored.iter().map(|r| r.precision).collect()),
            accuracy: (!accuracies.is_empty()).then(|| 100.0 * mean(accuracies)),
            mean_retrievals: mean(scored.iter().map(|r| r.retrievals as f64).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub provider: String,
    pub aggregates: Aggregates,
    pub results: Vec<ExampleResult>,
}

pub struct BenchmarkRun {
    pub report: RunReport,
    /// Traces of examples that completed, in qid order.
    pub traces: Vec<HopTrace>,
}

fn score(example: &QAExample, trace: &HopTrace) -> ExampleResult {
    let golds = &example.gold_answers;
    let prediction = trace.final_answer.clone();
    let metrics = (|| {
        let em = exact_match(&prediction, golds)?;
        let f1 = token_f1(&prediction, golds)?;
        let precision = token_precision(&prediction, golds)?;
        let accuracy = match example.answer_type {
            AnswerType::YesNo => Some(yesno_accuracy(&prediction, golds)?),
            AnswerType::Span => None,
        };
        Ok::<_, crate::metrics::MetricError>((em, f1, precision, accuracy))
    })();
    let base = ExampleResult {
        qid: example.qid.clone(),
        prediction,
        em: 0.0,
        f1: 0.0,
        precision: 0.0,
        accuracy: None,
        retrievals: trace.total_retrievals,
        hops: trace.hops.len(),
        terminated_by: Some(trace.terminated_by),
        error: None,
        failure: None,
    };
    match metrics {
        Ok((em, f1, precision, accuracy)) => ExampleResult {
            em,
            f1,
            precision,
            accuracy,
            ..base
        },
        Err(e) => ExampleResult {
            error: Some(e.to_string()),
            failure: Some(FailureClass::Data),
            ..base
        },
    }
}

fn failed(example: &QAExample, message: String, class: FailureClass) -> ExampleResult {
    ExampleResult {
        qid: example.qid.clone(),
        prediction: String::new(),
        em: 0.0,
        f1: 0.0,
        precision: 0.0,
        accuracy: None,
        retrievals: 0,
        hops: 0,
        terminated_by: None,
        error: Some(message),
        failure: Some(class),
    }
}

/// Runs every example through its own pipeline on the rayon pool. Failures
/// are recorded per example and never abort the run.
pub fn run_benchmark(
    examples: &[QAExample],
    index: &InvertedIndex,
    config: &PipelineConfig,
    prompts: &PromptSet,
    provider: &ProviderSpec,
) -> BenchmarkRun {
    let pipeline = Pipeline { index, config, prompts };
    let mut outcomes: Vec<(ExampleResult, Option<HopTrace>)> = examples
        .par_iter()
        .map(|example| {
            let mut generator = match provider.open(&example.qid) {
                Ok(g) => g,
                Err(e) => return (failed(example, e.to_string(), FailureClass::Provider), None),
            };
            match pipeline.run_question(&example.question, &mut generator) {
                Ok(trace) => (score(example, &trace), Some(trace)),
                Err(e) => {
                    let class = match e.kind {
                        PipelineErrorKind::Provider(_) => FailureClass::Provider,
                        PipelineErrorKind::Config(_) => FailureClass::Config,
                        PipelineErrorKind::Retriever(_) | PipelineErrorKind::Filter(_) => FailureClass::Data,
                    };
                    (failed(example, e.to_string(), class), None)
                }
            }
        })
        .collect();
    outcomes.sort_by(|a, b| a.0.qid.cmp(&b.0.qid));
    let (results, traces): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    BenchmarkRun {
        report: RunReport {
            config: config.clone(),
            provider: provider.to_string(),
            aggregates: Aggregates::from_results(&results),
            results,
        },
        traces: traces.into_iter().flatten().collect(),
    }
}

fn write_file(path: &Path, content: &str) -> Result<(), BenchmarkError> {
    fs::write(path, content).map_err(|source| BenchmarkError::Io {
        path: path.display().to_string(),
        source,
    })
}

impl BenchmarkRun {
    /// Writes `predictions.jsonl`, `traces.jsonl`, `report.json` and `summary.tsv`.
    pub fn write(&self, out_dir: &Path) -> Result<(), BenchmarkError> {
        fs::create_dir_all(out_dir).map_err(|source| BenchmarkError::Io {
            path: out_dir.display().to_string(),
            source,
        })?;
        let predictions: String = self
            .report
            .results
            .iter()
            .map(|r| serde_json::to_string(r).expect("results serialize") + "\n")
            .collect();
        write_file(&out_dir.join("predictions.jsonl"), &predictions)?;
        let traces: String = self.traces.iter().map(|t| t.to_json_line() + "\n").collect();
        write_file(&out_dir.join("traces.jsonl"), &traces)?;
        let report = serde_json::to_string_pretty(&self.report).expect("report serializes");
        write_file(&out_dir.join("report.json"), &(report + "\n"))?;
        write_file(&out_dir.join("summary.tsv"), &summary_table(&self.report.aggregates))
    }
}

pub fn summary_table(agg: &Aggregates) -> String {
    let accuracy = agg.accuracy.map(|a| format!("{a:.2}")).unwrap_or_else(|| "-".into());
    format!(
        "examples\tscored\tfailed\tEM\tF1\tACC\t#Ret\n{}\t{}\t{}\t{:.2}\t{:.2}\t{}\t{:.2}\n",
        agg.examples, agg.scored, agg.failed, agg.em, agg.f1, accuracy, agg.mean_retrievals
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatorRow {
    pub gamma: f64,
    pub delta: f64,
    pub em: f64,
    pub f1: f64,
    pub mean_retrievals: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub label: String,
    pub em: f64,
    pub f1: f64,
    pub precision: f64,
}

/// Mean aggregates across repeated trace sets.
fn averaged(runs: &[Aggregates]) -> (f64, f64, f64, f64) {
    let n = runs.len().max(1) as f64;
    let sum = |f: fn(&Aggregates) -> f64| runs.iter().map(f).sum::<f64>() / n;
    (
        sum(|a| a.em),
        sum(|a| a.f1),
        sum(|a| a.precision),
        sum(|a| a.mean_retrievals),
    )
}

/// One row per `(γ, δ)` point: EM, F1 and mean retrieval calls.
pub fn sweep_aggregator(
    examples: &[QAExample],
    index: &InvertedIndex,
    base: &PipelineConfig,
    prompts: &PromptSet,
    providers: &[ProviderSpec],
    grid: &[(f64, f64)],
) -> Vec<AggregatorRow> {
    grid.iter()
        .map(|&(gamma, delta)| {
            let mut config = base.clone();
            config.filter.gamma = gamma;
            config.filter.delta = delta;
            let runs: Vec<Aggregates> = providers
                .iter()
                .map(|p| run_benchmark(examples, index, &config, prompts, p).report.aggregates)
                .collect();
            let (em, f1, _, mean_retrievals) = averaged(&runs);
            AggregatorRow {
                gamma,
                delta,
                em,
                f1,
                mean_retrievals,
            }
        })
        .collect()
}

/// One row per trigger setting: EM, F1 and token precision.
pub fn sweep_threshold(
    examples: &[QAExample],
    index: &InvertedIndex,
    base: &PipelineConfig,
    prompts: &PromptSet,
    providers: &[ProviderSpec],
    triggers: &[TriggerConfig],
) -> Vec<ThresholdRow> {
    triggers
        .iter()
        .map(|trigger| {
            let config = PipelineConfig {
                trigger: TriggerConfig {
                    alpha: base.trigger.alpha,
                    beta: base.trigger.beta,
                    ..trigger.clone()
                },
                ..base.clone()
            };
            let runs: Vec<Aggregates> = providers
                .iter()
                .map(|p| run_benchmark(examples, index, &config, prompts, p).report.aggregates)
                .collect();
            let (em, f1, precision, _) = averaged(&runs);
            ThresholdRow {
                label: trigger_label(trigger),
                em,
                f1,
                precision,
            }
        })
        .collect()
}

pub fn trigger_label(trigger: &TriggerConfig) -> String {
    match trigger.mode {
        crate::signals::TriggerMode::Dynamic => "dynamic".into(),
        crate::signals::TriggerMode::Fixed => format!("fixed:{}", trigger.fixed_threshold),
    }
}

pub const AGGREGATOR_HEADER: &str = "gamma\tdelta\tEM\tF1\t#Ret";
pub const THRESHOLD_HEADER: &str = "threshold\tEM\tF1\tPrec.";

pub fn aggregator_table(rows: &[AggregatorRow]) -> String {
    let mut out = format!("{AGGREGATOR_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{:.1}\t{:.1}\t{:.2}\t{:.2}\t{:.2}\n",
            r.gamma, r.delta, r.em, r.f1, r.mean_retrievals
        ));
    }
    out
}

pub fn threshold_table(rows: &[ThresholdRow]) -> String {
    let mut out = format!("{THRESHOLD_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{}\t{:.2}\t{:.2}\t{:.2}\n", r.label, r.em, r.f1, r.precision));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(qid: &str, em: f64, f1: f64, retrievals: usize, error: Option<&str>) -> ExampleResult {
        ExampleResult {
            qid: qid.into(),
            prediction: String::new(),
            em,
            f1,
            precision: f1,
            accuracy: None,
            retrievals,
            hops: retrievals + 1,
            terminated_by: Some(Termination::NoTrigger),
            error: error.map(str::to_string),
            failure: None,
        }
    }

    #[test]
    fn aggregates_are_means() {
        let agg = Aggregates::from_results(&[result("a", 1.0, 1.0, 2, None), result("b", 1.0, 1.0, 4, None)]);
        assert_eq!(agg.em, 100.0);
        assert_eq!(agg.f1, 100.0);
        assert_eq!(agg.mean_retrievals, 3.0);
        assert_eq!(agg.accuracy, None);
    }

    #[test]
    fn failures_excluded_and_counted() {
        let agg = Aggregates::from_results(&[result("a", 1.0, 0.5, 2, None), result("b", 0.0, 0.0, 0, Some("boom"))]);
        assert_eq!((agg.scored, agg.failed), (1, 1));
        assert_eq!(agg.em, 100.0);
        assert_eq!(agg.f1, 50.0);
    }

    #[test]
    fn provider_spec_parsing() {
        assert_eq!(
            "trace:/tmp/t".parse::<ProviderSpec>().unwrap(),
            ProviderSpec::TraceDir("/tmp/t".into())
        );
        assert_eq!(
            "sidecar:http://localhost:8000".parse::<ProviderSpec>().unwrap(),
            ProviderSpec::Sidecar("http://localhost:8000".into())
        );
        assert!("ollama:x".parse::<ProviderSpec>().is_err());
    }

    #[test]
    fn table_layout() {
        let table = aggregator_table(&[AggregatorRow {
            gamma: 1.0,
            delta: 0.2,
            em: 50.0,
            f1: 62.5,
            mean_retrievals: 3.25,
        }]);
        assert_eq!(table, "gamma\tdelta\tEM\tF1\t#Ret\n1.0\t0.2\t50.00\t62.50\t3.25\n");
        let table = threshold_table(&[ThresholdRow {
            label: "fixed:0.6".into(),
            em: 1.0,
            f1: 2.0,
            precision: 3.0,
        }]);
        assert_eq!(table, "threshold\tEM\tF1\tPrec.\nfixed:0.6\t1.00\t2.00\t3.00\n");
    }
}
