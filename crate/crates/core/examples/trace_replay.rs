//! Records generation into a trace file and replays it.
//!
//! Any [`Generator`] can be wrapped in a [`RecordingGenerator`]; the resulting
//! JSONL file drives a [`TraceProvider`] that returns the same segments in
//! call order, which is how offline runs stay deterministic.

use hopwise::gateway::{
    GatewayError, GenerationRequest, GenerationSegment, Generator, RecordingGenerator, TraceProvider,
};
use hopwise::scripted::scripted_segment;

/// Stand-in model that echoes the prompt's last word with made-up signals.
struct Echo;

impl Generator for Echo {
    fn generate(&mut self, request: &GenerationRequest) -> Result<GenerationSegment, GatewayError> {
        let last = request.prompt.split_whitespace().last().unwrap_or("nothing");
        Ok(scripted_segment(
            &format!("You said {last}"),
            (0.2, 0.1),
            &[("said", 1.4, 0.6)],
        ))
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut recorder = RecordingGenerator::new(Echo);
    for prompt in ["hello there", "general Kenobi"] {
        recorder.generate(&GenerationRequest::new(prompt, 16))?;
    }
    let path = std::env::temp_dir().join(format!("hopwise-trace-{}.jsonl", std::process::id()));
    recorder.into_trace().write(&path)?;
    println!("{}", std::fs::read_to_string(&path)?.lines().next().unwrap_or_default());

    let mut replay = TraceProvider::from_path(&path)?;
    while replay.remaining() > 0 {
        let segment = replay.generate(&GenerationRequest::new("ignored", 16))?;
        println!(
            "call {}: {:?} ({} tokens)",
            replay.calls(),
            segment.text,
            segment.events.len()
        );
    }
    match replay.generate(&GenerationRequest::new("one more", 16)) {
        Err(e) => println!("after the last record: {e}"),
        Ok(_) => unreachable!("trace has no more records"),
    }
    std::fs::remove_file(path)?;
    Ok(())
}
