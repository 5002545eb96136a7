//! Desk-scale table retrieval laboratory.
//!
//! The crate wires together the full pipeline: tables load from
//! JSON-Lines corpora, linearize into delimited word sequences with
//! structural provenance, tokenize into six-channel index sequences, and
//! feed a from-scratch transformer bi-encoder (question tower + table
//! tower, CLS pooling, dot-product similarity). Training is contrastive
//! with in-batch and mined hard negatives over a reverse-mode autodiff
//! tape; evaluation is exact top-k retrieval accuracy. Structure
//! encoding is pluggable: auxiliary row/column embeddings, a hard
//! same-row/same-column attention mask, or a soft relation-based
//! attention bias. A seeded synthetic generator and an ablation runner
//! cover the shuffle, delimiter, and structure experiment grids.

pub mod ablation;
pub mod encoder;
pub mod error;
pub mod linearize;
pub mod retrieval;
pub mod synthetic;
pub mod table;
pub mod tensor;
pub mod tokenize;

pub use error::{Error, Result};
