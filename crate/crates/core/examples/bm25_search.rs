//! Builds a BM25 index over the toy corpus, runs a few queries, and saves and
//! reloads an index snapshot.

use hopwise::retriever::{open_index, read_snapshot, InvertedIndex};
use hopwise::scripted::grandfather_corpus;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let index = InvertedIndex::build(grandfather_corpus())?;
    println!(
        "{} documents, average length {:.2}",
        index.doc_count(),
        index.avg_doc_length()
    );

    for query in ["father Trémoille", "Académie française founded", "Thouars department"] {
        println!("\n{query:?}");
        for hit in index.search(query, 3)? {
            let title = &index.get(&hit.doc_id).expect("hit is indexed").title;
            println!("  {}. {} {:<40} {:.4}", hit.rank, hit.doc_id, title, hit.score);
        }
    }

    // Snapshots are keyed by a hash of the corpus file and rebuilt when stale.
    let dir = std::env::temp_dir().join(format!("hopwise-bm25-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let corpus = dir.join("corpus.jsonl");
    let lines: String = grandfather_corpus()
        .iter()
        .map(|d| serde_json::to_string(d).expect("documents serialize") + "\n")
        .collect();
    std::fs::write(&corpus, &lines)?;
    let snapshot = dir.join("index.hwix");
    open_index(&corpus, Some(&snapshot), 1.2, 0.75)?;
    let reloaded = read_snapshot(&snapshot, lines.as_bytes())?.expect("fresh snapshot");
    println!(
        "\nsnapshot {} reloads {} documents",
        snapshot.display(),
        reloaded.doc_count()
    );
    std::fs::write(&corpus, lines.replace("soldier", "officer"))?;
    let stale = read_snapshot(&snapshot, &std::fs::read(&corpus)?)?;
    println!(
        "after editing the corpus the snapshot is {}",
        if stale.is_some() { "reused" } else { "stale" }
    );
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
