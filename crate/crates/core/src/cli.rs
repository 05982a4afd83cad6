//! Command-line entry point: `ingest`, `convert`, `run`, `sweep`, `trace-dump`.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 provider error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::benchmark::{
    aggregator_table, run_benchmark, summary_table, sweep_aggregator, sweep_threshold, threshold_table, FailureClass,
    ProviderSpec,
};
use crate::dataset::{convert, load_dataset, to_jsonl, BenchmarkFormat, QAExample};
use crate::filter::{FilterConfig, FilterMode, Selection};
use crate::gateway::SidecarClient;
use crate::orchestrator::{HopTrace, PipelineConfig};
use crate::prompts::PromptSet;
use crate::retriever::{open_index, InvertedIndex, DEFAULT_B, DEFAULT_K1};
use crate::signals::TriggerConfig;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Provider(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Provider(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Provider(m) => m,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "hopwise", version, about = "Uncertainty-triggered multi-hop retrieval QA")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a BM25 index snapshot from a corpus file.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K1)]
        k1: f64,
        #[arg(long, default_value_t = DEFAULT_B)]
        b: f64,
    },
    /// Convert an upstream benchmark file into the unified question format.
    Convert {
        /// hotpotqa, 2wiki, strategyqa or iirc
        #[arg(long)]
        format: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the pipeline over a dataset and write per-example records and a report.
    Run(RunArgs),
    /// Run the (gamma, delta) grid and trigger settings and emit comparison tables.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated gamma:delta pairs.
        #[arg(long, default_value = "0.5:0.1,1.0:0.2,1.5:0.3")]
        grid: String,
        /// Comma-separated trigger settings for the threshold table.
        #[arg(long, default_value = "fixed:0.6,dynamic")]
        triggers: String,
    },
    /// Pretty-print a stream of hop traces.
    TraceDump { path: PathBuf },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// trace:<dir> or sidecar:<url>; repeat to average over several trace sets (sweep only).
    #[arg(long, required = true)]
    provider: Vec<String>,
    /// nofilter, cot, conf or cotconf
    #[arg(long, default_value = "cotconf")]
    mode: String,
    /// dynamic or fixed:<theta>
    #[arg(long, default_value = "dynamic")]
    trigger: String,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.2)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 5)]
    topk: usize,
    /// Keep entities with confidence above this value instead of the top-k.
    #[arg(long)]
    select_threshold: Option<f64>,
    #[arg(long, default_value_t = 3)]
    retrieval_k: usize,
    #[arg(long, default_value_t = 5)]
    max_hops: usize,
    #[arg(long, default_value_t = 256)]
    max_tokens: usize,
    #[arg(long, default_value_t = 1200)]
    memory_budget: usize,
    #[arg(long, default_value_t = DEFAULT_K1)]
    k1: f64,
    #[arg(long, default_value_t = DEFAULT_B)]
    b: f64,
    /// Optional index snapshot; rebuilt when stale.
    #[arg(long)]
    snapshot: Option<PathBuf>,
    /// Directory with prompt template overrides.
    #[arg(long)]
    prompts: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Reserved; runs are deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

pub fn parse_mode(s: &str) -> CliResult<FilterMode> {
    match s.to_ascii_lowercase().as_str() {
        "nofilter" | "none" => Ok(FilterMode::NoFilter),
        "cot" => Ok(FilterMode::CoT),
        "conf" => Ok(FilterMode::Conf),
        "cotconf" | "cot+conf" | "hybrid" => Ok(FilterMode::CoTConf),
        other => Err(CliError::Config(format!("unknown filter mode {other:?}"))),
    }
}

/// `dynamic` or `fixed:<theta>`; alpha and beta come from the other flags.
pub fn parse_trigger(s: &str, alpha: f64, beta: f64) -> CliResult<TriggerConfig> {
    let trigger = if s.eq_ignore_ascii_case("dynamic") {
        TriggerConfig::dynamic(alpha, beta)
    } else if let Some(theta) = s.strip_prefix("fixed:") {
        let theta: f64 = theta
            .parse()
            .map_err(|_| CliError::Config(format!("bad fixed threshold {theta:?}")))?;
        TriggerConfig {
            alpha,
            beta,
            ..TriggerConfig::fixed(theta)
        }
    } else if s.eq_ignore_ascii_case("fixed") {
        TriggerConfig {
            alpha,
            beta,
            ..TriggerConfig::fixed(crate::signals::DEFAULT_FIXED_THRESHOLD)
        }
    } else {
        return Err(CliError::Config(format!("unknown trigger {s:?}")));
    };
    Ok(trigger)
}

pub fn parse_grid(s: &str) -> CliResult<Vec<(f64, f64)>> {
    s.split(',')
        .map(|pair| {
            let (g, d) = pair
                .split_once(':')
                .ok_or_else(|| CliError::Config(format!("grid point {pair:?} is not gamma:delta")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Config(format!("bad number {v:?} in grid")))
            };
            Ok((parse(g)?, parse(d)?))
        })
        .collect()
}

impl RunArgs {
    fn config(&self) -> CliResult<PipelineConfig> {
        let selection = match self.select_threshold {
            Some(tau) => Selection::Threshold(tau),
            None => Selection::TopK(self.topk),
        };
        let config = PipelineConfig {
            trigger: parse_trigger(&self.trigger, self.alpha, self.beta)?,
            filter: FilterConfig {
                mode: parse_mode(&self.mode)?,
                gamma: self.gamma,
                delta: self.delta,
                selection,
            },
            retrieval_k: self.retrieval_k,
            max_hops: self.max_hops,
            max_tokens_per_segment: self.max_tokens,
            memory_budget_chars: self.memory_budget,
        };
        config.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(config)
    }

    fn prompts(&self) -> CliResult<PromptSet> {
        match &self.prompts {
            Some(dir) => {
                PromptSet::load_dir(dir).map_err(|e| CliError::Config(format!("prompts {}: {e}", dir.display())))
            }
            None => Ok(PromptSet::default()),
        }
    }

    fn providers(&self) -> CliResult<Vec<ProviderSpec>> {
        let specs = self
            .provider
            .iter()
            .map(|p| p.parse::<ProviderSpec>().map_err(|e| CliError::Config(e.to_string())))
            .collect::<CliResult<Vec<_>>>()?;
        for spec in &specs {
            check_provider(spec)?;
        }
        Ok(specs)
    }

    fn inputs(&self) -> CliResult<(Vec<QAExample>, InvertedIndex)> {
        let examples = load_dataset(&self.dataset).map_err(|e| CliError::Data(e.to_string()))?;
        let index = open_index(&self.corpus, self.snapshot.as_deref(), self.k1, self.b)
            .map_err(|e| CliError::Data(e.to_string()))?;
        Ok((examples, index))
    }
}

fn check_provider(spec: &ProviderSpec) -> CliResult<()> {
    match spec {
        ProviderSpec::TraceDir(dir) if !dir.is_dir() => Err(CliError::Provider(format!(
            "trace directory {} does not exist",
            dir.display()
        ))),
        ProviderSpec::TraceDir(_) => Ok(()),
        ProviderSpec::Sidecar(url) => SidecarClient::new(url.clone())
            .and_then(|c| c.health())
            .map(|_| ())
            .map_err(|e| CliError::Provider(format!("sidecar {url}: {e}"))),
    }
}

fn write_out(path: &Path, content: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Data(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, content).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn cmd_run(args: &RunArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let config = args.config()?;
    let prompts = args.prompts()?;
    let providers = args.providers()?;
    if providers.len() != 1 {
        return Err(CliError::Config("run takes exactly one --provider".into()));
    }
    let (examples, index) = args.inputs()?;
    let run = run_benchmark(&examples, &index, &config, &prompts, &providers[0]);
    run.write(&args.out).map_err(|e| CliError::Data(e.to_string()))?;
    let _ = write!(stdout, "{}", summary_table(&run.report.aggregates));
    let results = &run.report.results;
    if !results.is_empty() && results.iter().all(|r| r.failure == Some(FailureClass::Provider)) {
        return Err(CliError::Provider("every example failed in the provider".into()));
    }
    Ok(())
}

fn cmd_sweep(args: &RunArgs, grid: &str, triggers: &str, stdout: &mut dyn Write) -> CliResult<()> {
    let base = args.config()?;
    let prompts = args.prompts()?;
    let providers = args.providers()?;
    let grid = parse_grid(grid)?;
    let triggers = triggers
        .split(',')
        .map(|t| parse_trigger(t.trim(), args.alpha, args.beta))
        .collect::<CliResult<Vec<_>>>()?;
    let (examples, index) = args.inputs()?;

    let aggregator = aggregator_table(&sweep_aggregator(&examples, &index, &base, &prompts, &providers, &grid));
    let threshold = threshold_table(&sweep_threshold(
        &examples, &index, &base, &prompts, &providers, &triggers,
    ));
    write_out(&args.out.join("sweep_aggregator.tsv"), &aggregator)?;
    write_out(&args.out.join("sweep_threshold.tsv"), &threshold)?;
    let _ = write!(stdout, "{aggregator}\n{threshold}");
    Ok(())
}

fn cmd_trace_dump(path: &Path, stdout: &mut dyn Write) -> CliResult<()> {
    let content = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    for (i, line) in content.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let trace: HopTrace = serde_json::from_str(line)
            .map_err(|e| CliError::Data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        let _ = write!(stdout, "{}", render_trace(&trace));
    }
    Ok(())
}

/// Human-readable multi-line view of one trace.
pub fn render_trace(trace: &HopTrace) -> String {
    let mut out = format!("question: {}\n", trace.question);
    for hop in &trace.hops {
        let d = &hop.decision;
        out.push_str(&format!(
            "  hop {}: {} (max score {:.3} vs threshold {:.3}{})\n",
            hop.hop_index,
            if d.triggered { "retrieve" } else { "no retrieval" },
            d.max_score,
            d.threshold_used,
            d.token_index
                .and_then(|i| hop.segment.events.get(i))
                .map(|e| format!(", first at token {} {:?}", e.index, e.text))
                .unwrap_or_default(),
        ));
        if !hop.extracted.is_empty() {
            let names: Vec<_> = hop.extracted.iter().map(|e| e.surface.as_str()).collect();
            out.push_str(&format!("    extracted: {}\n", names.join(", ")));
            let kept: Vec<_> = hop
                .kept
                .iter()
                .map(|e| match e.confidence {
                    Some(c) => format!("{} ({c:.3})", e.surface),
                    None => e.surface.clone(),
                })
                .collect();
            out.push_str(&format!("    kept: {}\n", kept.join(", ")));
        }
        if let Some(q) = &hop.subquery {
            out.push_str(&format!("    sub-query: {}\n", q.replace('\n', " / ")));
        }
        for doc in &hop.retrieved {
            out.push_str(&format!("    [{}] {} {:.4}\n", doc.rank, doc.doc_id, doc.score));
        }
    }
    out.push_str(&format!(
        "  memory: {}\n",
        trace
            .memory
            .iter()
            .map(|r| format!("{} ({:.2})", r.surface, r.confidence))
            .collect::<Vec<_>>()
            .join("; ")
    ));
    out.push_str(&format!(
        "  answer: {}\n  retrievals: {}, terminated by {:?}\n",
        trace.final_answer, trace.total_retrievals, trace.terminated_by
    ));
    out
}

fn dispatch(cli: Cli, stdout: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Ingest { corpus, out, k1, b } => {
            let index = open_index(&corpus, None, k1, b).map_err(|e| CliError::Data(e.to_string()))?;
            let bytes = fs::read(&corpus).map_err(|e| CliError::Data(e.to_string()))?;
            crate::retriever::write_snapshot(&index, &bytes, &out).map_err(|e| CliError::Data(e.to_string()))?;
            let _ = writeln!(stdout, "indexed {} documents into {}", index.doc_count(), out.display());
            Ok(())
        }
        Command::Convert { format, input, out } => {
            let format: BenchmarkFormat = format
                .parse()
                .map_err(|e: crate::dataset::DatasetError| CliError::Config(e.to_string()))?;
            let content =
                fs::read_to_string(&input).map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
            let converted = convert(format, &content).map_err(|e| CliError::Data(e.to_string()))?;
            write_out(&out, &to_jsonl(&converted.examples))?;
            let _ = writeln!(
                stdout,
                "converted {} examples ({} skipped) into {}",
                converted.examples.len(),
                converted.skipped,
                out.display()
            );
            Ok(())
        }
        Command::Run(args) => cmd_run(&args, stdout),
        Command::Sweep { run, grid, triggers } => cmd_sweep(&run, &grid, &triggers, stdout),
        Command::TraceDump { path } => cmd_trace_dump(&path, stdout),
    }
}

/// Parses arguments, runs the command and maps failures to exit codes.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message());
            e.exit_code()
        }
    }
}

pub fn main() -> ExitCode {
    let code = main_with_args(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    ExitCode::from(code)
}
