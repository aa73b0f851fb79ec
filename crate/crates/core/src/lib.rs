//! Checkpoint validation for dense retrievers: encode queries and passages with
//! a checkpoint, run exact top-k inner-product search, score the ranking
//! against relevance judgments, and report metrics per checkpoint.

pub mod corpus_io;
pub mod encoder;
pub mod evaluator;
pub mod mips;
pub mod orchestrator;
pub mod reporter;
pub mod splitter;
