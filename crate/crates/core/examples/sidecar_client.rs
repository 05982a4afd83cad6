//! Streams one generation from an inference sidecar.
//!
//! ```text
//! cargo run --example sidecar_client -- http://127.0.0.1:8000 "Q: 2+2?"
//! ```
//!
//! Without a URL the example starts a tiny in-process server that speaks the
//! same newline-delimited protocol, so it runs offline.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::thread;

use hopwise::gateway::{GenerationRequest, Generator, SidecarClient};
use hopwise::signals::{should_retrieve, TriggerConfig};

const CANNED: &str = concat!(
    "{\"index\":0,\"text\":\"2+2\",\"entropy\":0.31,\"attn_to_past\":{}}\n",
    "{\"index\":1,\"text\":\" is\",\"entropy\":0.05,\"attn_to_past\":{\"0\":0.82}}\n",
    "{\"index\":2,\"text\":\" 4\",\"entropy\":1.90,\"attn_to_past\":{\"0\":0.40,\"1\":0.35}}\n",
    "{\"finish_reason\":\"stop\"}\n",
);

fn fake_sidecar() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
    let url = format!("http://{}", listener.local_addr().unwrap());
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let mut reader = BufReader::new(stream);
            let mut line = String::new();
            let mut length = 0usize;
            while reader.read_line(&mut line).is_ok_and(|n| n > 0) {
                if line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap_or(0);
                }
                line.clear();
            }
            let mut body = vec![0; length];
            let _ = std::io::Read::read_exact(&mut reader, &mut body);
            let payload = if length == 0 {
                "{\"status\":\"ok\",\"model_id\":\"canned\"}"
            } else {
                CANNED
            };
            let _ = write!(
                reader.into_inner(),
                "HTTP/1.1 200 OK\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                payload.len()
            );
        }
    });
    url
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let url = args.next().unwrap_or_else(fake_sidecar);
    let prompt = args.next().unwrap_or_else(|| "Q: 2+2?".into());

    let mut client = SidecarClient::new(url.clone())?;
    println!("{url} serves {:?}", client.health()?);
    let segment = client.generate(&GenerationRequest::new(prompt, 32))?;
    for e in &segment.events {
        println!(
            "{:>3} {:<10} entropy {:.3}  max_attn {:.3}",
            e.index,
            format!("{:?}", e.text),
            e.entropy,
            e.max_attn
        );
    }
    let decision = should_retrieve(&segment.events, &TriggerConfig::default())?;
    println!("finish {:?}; retrieve: {}", segment.finish_reason, decision.triggered);
    Ok(())
}
