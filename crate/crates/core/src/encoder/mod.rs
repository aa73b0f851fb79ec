//! Turning token batches into dense vectors, either through an external
//! plugin process or the built-in deterministic encoder.

mod builtin;
pub mod protocol;
mod session;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus_io::TokenBatch;

pub use builtin::{builtin_encode, checkpoint_seed, fnv1a64, splitmix64, BuiltinEncoder};
pub use session::{open_session, PluginSession, SessionConfig, SessionState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodeKind {
    Query,
    Passage,
}

impl std::fmt::Display for EncodeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EncodeKind::Query => "query",
            EncodeKind::Passage => "passage",
        })
    }
}

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("spawn: {0}")]
    Spawn(String),
    #[error("handshake: {0}")]
    Handshake(String),
    #[error("plugin error: {0}")]
    Plugin(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("timeout: no reply within {0:?}")]
    Timeout(Duration),
    #[error("plugin exited: {0}")]
    Exited(String),
    #[error("non-finite value in vector row {row}, component {component}")]
    NonFinite { row: usize, component: usize },
    #[error("session is {0:?}, not ready")]
    NotReady(SessionState),
    #[error("{kind} batch has length {got}, expected {expected}")]
    BatchLength {
        kind: EncodeKind,
        expected: usize,
        got: usize,
    },
}

/// A contiguous batch of vectors, row-major `ids.len() x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBlock {
    pub ids: Vec<String>,
    pub vectors: Vec<f32>,
    pub dim: usize,
}

impl EmbeddingBlock {
    pub fn new(ids: Vec<String>, vectors: Vec<f32>, dim: usize) -> Self {
        assert!(dim >= 1, "dim must be at least 1");
        assert_eq!(ids.len() * dim, vectors.len(), "vector buffer does not match ids x dim");
        Self { ids, vectors, dim }
    }

    pub fn empty(dim: usize) -> Self {
        Self::new(Vec::new(), Vec::new(), dim)
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Appends the rows of `other`, which must share this block's dim.
    pub fn extend(&mut self, other: EmbeddingBlock) {
        assert_eq!(self.dim, other.dim);
        self.ids.extend(other.ids);
        self.vectors.extend(other.vectors);
    }

    /// Position of the first NaN or infinite component, if any.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.vectors
            .iter()
            .position(|v| !v.is_finite())
            .map(|p| (p / self.dim, p % self.dim))
    }
}

/// Something that embeds token batches. Calls are strictly sequential.
pub trait Encoder {
    fn dim(&self) -> usize;

    fn encode(&mut self, kind: EncodeKind, batch: &TokenBatch) -> Result<EmbeddingBlock, EncoderError>;

    fn close(&mut self) -> Result<(), EncoderError> {
        Ok(())
    }
}
