//! Parses entity lines from a generated segment, aligns them to tokens, scores
//! them, and compares the four filter modes.

use hopwise::extraction::{align_spans, parse_extraction_output, parse_verdicts};
use hopwise::filter::{filter_entities, FilterConfig, FilterMode, Selection};
use hopwise::scripted::scripted_segment;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let segment = scripted_segment(
        "The father of Charles Bretagne was Jean Bretagne Charles, Duke of Thouars.\n\
         ENTITY: Jean Bretagne Charles | RELATION: father\n\
         ENTITY: Thouars | RELATION: duchy\n\
         ENTITY: Duke | RELATION: title\n\
         ENTITY: Versailles | RELATION: residence\n\
         this line is not an entity\n",
        (0.4, 0.2),
        &[
            ("Jean", 0.3, 0.9),
            ("Thouars.", 2.5, 0.1),
            ("Duke", 1.0, 0.3),
            ("Versailles", 3.2, 0.05),
        ],
    );
    let parsed = parse_extraction_output(&segment.text);
    println!(
        "parsed {} entities, skipped {} lines",
        parsed.entities.len(),
        parsed.skipped
    );
    let entities = align_spans(&parsed.entities, &segment);
    for e in &entities {
        println!("  {:<24} span {:?}", e.surface, e.span);
    }

    // A validation reply as the model would write it.
    let verdicts = parse_verdicts("KEEP: 1\nKEEP: 2\nDROP: 3\nKEEP: 4", entities.len());

    for mode in [
        FilterMode::NoFilter,
        FilterMode::CoT,
        FilterMode::Conf,
        FilterMode::CoTConf,
    ] {
        let cfg = FilterConfig {
            mode,
            selection: Selection::TopK(2),
            ..FilterConfig::default()
        };
        let outcome = filter_entities(&entities, &segment.events, &cfg, Some(&verdicts.keep_mask()))?;
        let kept: Vec<String> = outcome
            .kept
            .iter()
            .map(|e| match e.confidence {
                Some(c) => format!("{} ({c:.3})", e.surface),
                None => e.surface.clone(),
            })
            .collect();
        println!("{mode:?}: {} [unscored {}]", kept.join(", "), outcome.unscored);
    }
    Ok(())
}
