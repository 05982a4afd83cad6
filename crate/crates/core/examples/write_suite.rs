//! Writes the scripted 20-question suite (corpus, dataset, per-question
//! traces) to a directory so the `hopwise` binary can be run against it.
//!
//! ```text
//! cargo run --example write_suite -- /tmp/suite
//! hopwise run --dataset /tmp/suite/dataset.jsonl --corpus /tmp/suite/corpus.jsonl \
//!     --provider trace:/tmp/suite/traces --mode conf --out /tmp/suite/out
//! ```

use std::path::PathBuf;

use hopwise::scripted::{chain_suite, grandfather_scenario};

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "suite".into()));
    let mut suite = chain_suite();
    let golden = grandfather_scenario();
    suite.corpus.extend(golden.corpus);
    suite.traces.insert(golden.example.qid.clone(), golden.trace);
    suite.examples.push(golden.example);
    suite.write_to(&dir)?;
    println!(
        "wrote {} documents, {} questions and {} traces to {}",
        suite.corpus.len(),
        suite.examples.len(),
        suite.traces.len(),
        dir.display()
    );
    Ok(())
}
