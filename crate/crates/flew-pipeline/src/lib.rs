//! Orchestration for the faceted-embedding pipeline: flat-file
//! configuration, the nine-stage graph with digest-based resumability, the
//! binary document-embedding format, an HTTP client for the abstract
//! splitting service, and a synthetic corpus generator with planted facet
//! communities for end-to-end checks.

pub mod config;
pub mod error;
pub mod llm;
pub mod manifest;
pub mod stages;
pub mod synth;
pub mod vectors;

pub use error::{PipelineError, Result};
