//! Aggregator (γ, δ) grid and trigger comparison tables over the scripted suite.

use hopwise::benchmark::{aggregator_table, sweep_aggregator, sweep_threshold, threshold_table, ProviderSpec};
use hopwise::filter::{FilterConfig, FilterMode};
use hopwise::orchestrator::PipelineConfig;
use hopwise::prompts::PromptSet;
use hopwise::retriever::InvertedIndex;
use hopwise::scripted::chain_suite;
use hopwise::TriggerConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("hopwise-sweep-{}", std::process::id()));
    let suite = chain_suite();
    suite.write_to(&dir)?;
    let index = InvertedIndex::build(suite.corpus)?;
    let base = PipelineConfig {
        filter: FilterConfig {
            mode: FilterMode::Conf,
            ..FilterConfig::default()
        },
        ..PipelineConfig::default()
    };
    let prompts = PromptSet::default();
    let providers = [ProviderSpec::TraceDir(dir.join("traces"))];

    let grid = [(0.5, 0.1), (1.0, 0.2), (1.5, 0.3)];
    let rows = sweep_aggregator(&suite.examples, &index, &base, &prompts, &providers, &grid);
    println!("{}", aggregator_table(&rows));

    let triggers = [
        TriggerConfig::fixed(0.6),
        TriggerConfig::fixed(1.5),
        TriggerConfig::dynamic(1.0, 1.0),
    ];
    let rows = sweep_threshold(&suite.examples, &index, &base, &prompts, &providers, &triggers);
    println!("{}", threshold_table(&rows));
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
