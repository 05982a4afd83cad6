//! Scores predictions with EM, token F1 and yes/no accuracy, then runs the
//! scripted suite through the benchmark runner.

use hopwise::benchmark::{run_benchmark, summary_table, ProviderSpec};
use hopwise::filter::{FilterConfig, FilterMode};
use hopwise::metrics::{exact_match, normalize_answer, token_f1, yesno_accuracy};
use hopwise::orchestrator::PipelineConfig;
use hopwise::prompts::PromptSet;
use hopwise::retriever::InvertedIndex;
use hopwise::scripted::chain_suite;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pairs = [
        ("The Jean Bretagne Charles", "Bretagne Charles"),
        ("Paris, France", "paris"),
        ("Yes, it was.", "yes"),
    ];
    for (pred, gold) in pairs {
        let golds = vec![gold.to_string()];
        print!(
            "{pred:?} vs {gold:?}: normalized {:?}, EM {}, F1 {:.3}",
            normalize_answer(pred),
            exact_match(pred, &golds)?,
            token_f1(pred, &golds)?
        );
        if let Ok(acc) = yesno_accuracy(pred, &golds) {
            print!(", accuracy {acc}");
        }
        println!();
    }

    let dir = std::env::temp_dir().join(format!("hopwise-eval-{}", std::process::id()));
    let suite = chain_suite();
    suite.write_to(&dir)?;
    let index = InvertedIndex::build(suite.corpus)?;
    let config = PipelineConfig {
        filter: FilterConfig {
            mode: FilterMode::Conf,
            ..FilterConfig::default()
        },
        ..PipelineConfig::default()
    };
    let provider = ProviderSpec::TraceDir(dir.join("traces"));
    let run = run_benchmark(&suite.examples, &index, &config, &PromptSet::default(), &provider);
    println!("\n{}", summary_table(&run.report.aggregates));
    for r in run.report.results.iter().filter(|r| r.em == 0.0).take(3) {
        println!("miss {}: {:?} after {} retrievals", r.qid, r.prediction, r.retrievals);
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
