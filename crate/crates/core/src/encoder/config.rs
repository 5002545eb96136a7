use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenize::PositionMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureMode {
    None,
    AuxEmbeddings,
    HardMask,
    SoftBias,
}

impl StructureMode {
    pub const ALL: [StructureMode; 4] = [
        StructureMode::None,
        StructureMode::AuxEmbeddings,
        StructureMode::HardMask,
        StructureMode::SoftBias,
    ];
}

impl std::fmt::Display for StructureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StructureMode::None => "none",
            StructureMode::AuxEmbeddings => "aux_embeddings",
            StructureMode::HardMask => "hard_mask",
            StructureMode::SoftBias => "soft_bias",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub position_mode: PositionMode,
    pub structure_mode: StructureMode,
    pub use_rank_embedding: bool,
    pub vocab_size: usize,
    pub max_rows: usize,
    pub max_cols: usize,
    pub max_rank: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

fn default_dropout() -> f64 {
    0.1
}

impl EncoderConfig {
    /// Desk-scale default: 2 layers, 2 heads, hidden 64, feed-forward 128.
    pub fn desk(vocab_size: usize) -> Self {
        EncoderConfig {
            layers: 2,
            heads: 2,
            hidden: 64,
            ff_dim: 128,
            max_len: 128,
            position_mode: PositionMode::Sequential,
            structure_mode: StructureMode::None,
            use_rank_embedding: false,
            vocab_size,
            max_rows: 128,
            max_cols: 64,
            max_rank: 64,
            dropout: 0.1,
        }
    }

    /// Named size presets: medium (8 layers, 8 heads, 512 hidden),
    /// base (12, 8, 768), large (24, 16, 1024); feed-forward is 4x hidden.
    pub fn preset(name: &str, vocab_size: usize) -> Option<Self> {
        let (layers, heads, hidden) = match name {
            "desk" => return Some(Self::desk(vocab_size)),
            "medium" => (8, 8, 512),
            "base" => (12, 8, 768),
            "large" => (24, 16, 1024),
            _ => return None,
        };
        Some(EncoderConfig {
            layers,
            heads,
            hidden,
            ff_dim: 4 * hidden,
            max_len: 512,
            ..Self::desk(vocab_size)
        })
    }

    pub fn with_structure(mut self, mode: StructureMode) -> Self {
        self.structure_mode = mode;
        self
    }

    pub fn with_position(mut self, mode: PositionMode) -> Self {
        self.position_mode = mode;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |message: &str| {
            Err(Error::InvalidConfig {
                message: message.to_string(),
            })
        };
        if self.layers == 0 || self.heads == 0 || self.hidden == 0 || self.ff_dim == 0 {
            return fail("layers, heads, hidden, and ff_dim must be positive");
        }
        if self.hidden % self.heads != 0 {
            return fail("hidden must be divisible by heads");
        }
        if self.max_len < 2 {
            return fail("max_len must fit CLS and SEP");
        }
        if self.vocab_size == 0 {
            return fail("vocab_size must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must be in [0, 1)");
        }
        Ok(())
    }
}
