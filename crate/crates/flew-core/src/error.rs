//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
#[non_exhaustive]
pub enum Error {
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown node id `{id}`")]
    UnknownNode { id: String },

    #[error("unknown paper id `{id}`")]
    UnknownPaper { id: String },

    #[error("no split available for paper `{id}`")]
    MissingSplit { id: String },

    #[error("no embedding available for id `{id}`")]
    MissingEmbedding { id: String },

    #[error("node set is empty")]
    EmptyNodeSet,

    #[error("population {population} too small for rank windows: {requirement}")]
    PopulationTooSmall {
        population: usize,
        requirement: String,
    },

    #[error("non-finite update at epoch {epoch}, edge {edge}")]
    NonFiniteUpdate { epoch: usize, edge: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("abstract is empty")]
    EmptyAbstract,

    #[error("split response rejected: {0}")]
    SplitResponse(String),

    #[error("split failed validation: {}", diagnostics.join("; "))]
    SplitRejected { diagnostics: Vec<String> },

    #[error("split service call failed: {0}")]
    SplitClient(String),

    #[error("bad file format: {0}")]
    FileFormat(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("relevant set is empty")]
    EmptyRelevantSet,

    #[error("rank correlation undefined: {0} is entirely tied")]
    AllTies(String),

    #[error("linear system is singular beyond ridge damping")]
    SingularSystem,

    #[error("bad task file: {0}")]
    TaskFormat(String),
}
