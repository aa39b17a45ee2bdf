//! Facet-level representation learning for scientific documents.
//!
//! The crate covers the full model pipeline as a set of independent modules:
//! corpus ingestion ([`corpus`]), facet subgraph extraction ([`facet_graph`]),
//! shallow structural node embeddings ([`graph_embed`]), neighborhood triplet
//! sampling ([`triplet_sampler`]), abstract sectioning ([`text_splitter`]),
//! hashing-based facet encoders ([`encoder`]), simplex-weighted combination
//! ([`combiner`]), and an evaluation harness ([`eval`]).
//!
//! Every stochastic component is keyed by explicit integer seeds and repeated
//! runs with the same inputs produce bit-identical results.

pub mod combiner;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod facet_graph;
pub mod graph_embed;
pub mod hashing;
pub mod text_splitter;
pub mod triplet_sampler;
pub mod vecmath;

pub use error::{Error, Result};
pub use facet_graph::Facet;
