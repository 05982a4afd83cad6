//! The grandfather question end to end: two uncertainty-triggered retrievals,
//! the bridging entity carried in memory, then a confident final hop.

use hopwise::cli::render_trace;
use hopwise::filter::{FilterConfig, FilterMode};
use hopwise::orchestrator::{Pipeline, PipelineConfig};
use hopwise::prompts::PromptSet;
use hopwise::retriever::InvertedIndex;
use hopwise::scripted::grandfather_scenario;
use hopwise::TraceProvider;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = grandfather_scenario();
    let index = InvertedIndex::build(scenario.corpus)?;
    let config = PipelineConfig {
        filter: FilterConfig {
            mode: FilterMode::Conf,
            ..FilterConfig::default()
        },
        ..PipelineConfig::default()
    };
    let prompts = PromptSet::default();
    let pipeline = Pipeline {
        index: &index,
        config: &config,
        prompts: &prompts,
    };
    let mut provider = TraceProvider::new(scenario.trace);
    let trace = pipeline.run_question(&scenario.example.question, &mut provider)?;
    print!("{}", render_trace(&trace));
    println!("gold: {}", scenario.example.gold_answers[0]);
    Ok(())
}
