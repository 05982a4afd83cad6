//! Token uncertainty signals and the retrieval trigger.
//!
//! Computes entropy from next-token distributions, folds attention rows into
//! per-token maxima, and compares the dynamic and fixed trigger on one segment.

use hopwise::signals::{fold_future_attention, should_retrieve, token_entropy, TokenEvent, TriggerConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tokens = ["His", " father", " was", " Jean", "."];
    let distributions: [&[f64]; 5] = [
        &[0.9, 0.05, 0.05],
        &[0.25, 0.25, 0.25, 0.25],
        &[0.97, 0.03],
        &[0.4, 0.3, 0.2, 0.1],
        &[1.0],
    ];
    // attention_rows[j] lists (earlier token, weight) pairs for token j.
    let attention_rows = vec![
        vec![],
        vec![(0, 0.6)],
        vec![(0, 0.2), (1, 0.7)],
        vec![(1, 0.9), (2, 0.05)],
        vec![(3, 0.3)],
    ];
    let max_attn = fold_future_attention(tokens.len(), &attention_rows)?;

    let mut events = Vec::new();
    for (i, text) in tokens.iter().enumerate() {
        let entropy = token_entropy(distributions[i])?;
        events.push(TokenEvent::new(i, *text, entropy, max_attn[i])?);
    }
    println!("{:<8} {:>8} {:>8}", "token", "entropy", "max_attn");
    for e in &events {
        println!("{:<8} {:>8.4} {:>8.4}", e.text.trim(), e.entropy, e.max_attn);
    }

    for cfg in [
        TriggerConfig::dynamic(1.0, 1.0),
        TriggerConfig::fixed(0.6),
        TriggerConfig::fixed(2.5),
    ] {
        let d = should_retrieve(&events, &cfg)?;
        println!(
            "{:?} threshold {:.4}: triggered={} at {:?} (max score {:.4})",
            cfg.mode, d.threshold_used, d.triggered, d.token_index, d.max_score
        );
    }
    Ok(())
}
