//! Transformer bi-encoder towers with pluggable structure encoding.
//!
//! Both towers share the embedding stack (token + segment + position,
//! optionally row/column and numeric-rank embeddings) and a post-norm
//! self-attention encoder. Structure modes change how attention sees the
//! table: `aux_embeddings` adds zero-initialized row/column embedding
//! tables, `hard_mask` restricts attention to same-row/same-column pairs,
//! and `soft_bias` adds learned per-head scalars keyed by the 13-way
//! structural relation of each token pair.

mod config;
mod mask;
mod model;
mod relations;

pub use config::{EncoderConfig, StructureMode};
pub use mask::build_hard_mask;
pub use model::{
    encode_sequence, AttentionProbe, BiEncoder, DropoutState, TowerKind, LN_EPS,
};
pub use relations::{
    build_relation_matrix, token_component, Component, RelationTaxonomy, RELATION_COUNT,
};
