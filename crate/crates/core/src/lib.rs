//! Multi-hop question answering that retrieves only when token-level
//! uncertainty spikes, keeps a confidence-ranked entity memory across hops,
//! and searches a local BM25 index.
//!
//! The pipeline is driven by a [`gateway::Generator`]: either a recorded
//! trace file ([`gateway::TraceProvider`]) or a streaming inference server
//! ([`gateway::SidecarClient`]).

pub mod benchmark;
pub mod cli;
pub mod dataset;
pub mod extraction;
pub mod filter;
pub mod gateway;
pub mod memory;
pub mod metrics;
pub mod orchestrator;
pub mod prompts;
pub mod retriever;
pub mod scripted;
pub mod signals;

pub use filter::{FilterConfig, FilterMode, Selection};
pub use gateway::{GenerationRequest, GenerationSegment, Generator, TraceProvider};
pub use memory::MemoryStore;
pub use orchestrator::{HopTrace, Pipeline, PipelineConfig, Termination};
pub use retriever::{Document, InvertedIndex};
pub use signals::{TokenEvent, TriggerConfig, TriggerDecision};
