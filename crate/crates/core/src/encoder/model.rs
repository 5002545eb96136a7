use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{
    read_checkpoint, scalar, write_checkpoint, BoundParams, Params, Scalar, Tape, TensorId,
};
use crate::tokenize::TokenizedSequence;

use super::{
    build_hard_mask, build_relation_matrix, EncoderConfig, RelationTaxonomy, StructureMode,
    RELATION_COUNT,
};

pub const LN_EPS: f64 = 1e-12;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TowerKind {
    Question,
    Table,
}

/// Seeded dropout source for one forward pass (or one training step).
/// Absence means inference: dropout is the identity.
pub struct DropoutState {
    pub p: f64,
    rng: ChaCha8Rng,
}

impl DropoutState {
    pub fn new(p: f64, seed: u64) -> Self {
        DropoutState {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// Attention probabilities recorded during a forward pass, one entry per
/// (layer, head).
pub struct AttentionProbe {
    pub layer: usize,
    pub head: usize,
    pub probs: TensorId,
}

enum Init {
    Gaussian,
    Zeros,
    Ones,
}

/// Parameter names, shapes, and initializers for one tower, in the fixed
/// declaration order shared by init, checkpoints, and optimizer state.
fn tower_spec(config: &EncoderConfig) -> Vec<(String, Vec<usize>, Init)> {
    let h = config.hidden;
    let mut spec: Vec<(String, Vec<usize>, Init)> = vec![
        ("tok_emb".into(), vec![config.vocab_size, h], Init::Gaussian),
        ("seg_emb".into(), vec![2, h], Init::Gaussian),
        ("pos_emb".into(), vec![config.max_len, h], Init::Gaussian),
    ];
    if config.structure_mode == StructureMode::AuxEmbeddings {
        // zero-initialized so the mode starts identical to plain text encoding
        spec.push(("row_emb".into(), vec![config.max_rows + 1, h], Init::Zeros));
        spec.push(("col_emb".into(), vec![config.max_cols + 1, h], Init::Zeros));
    }
    if config.use_rank_embedding {
        spec.push(("rank_emb".into(), vec![config.max_rank + 1, h], Init::Zeros));
    }
    spec.push(("emb_ln.gain".into(), vec![h], Init::Ones));
    spec.push(("emb_ln.offset".into(), vec![h], Init::Zeros));
    for l in 0..config.layers {
        for w in ["wq", "wk", "wv", "wo"] {
            spec.push((format!("layer.{l}.attn.{w}"), vec![h, h], Init::Gaussian));
        }
        for b in ["bq", "bk", "bv", "bo"] {
            spec.push((format!("layer.{l}.attn.{b}"), vec![h], Init::Zeros));
        }
        spec.push((format!("layer.{l}.attn_ln.gain"), vec![h], Init::Ones));
        spec.push((format!("layer.{l}.attn_ln.offset"), vec![h], Init::Zeros));
        spec.push((format!("layer.{l}.ff.w1"), vec![h, config.ff_dim], Init::Gaussian));
        spec.push((format!("layer.{l}.ff.b1"), vec![config.ff_dim], Init::Zeros));
        spec.push((format!("layer.{l}.ff.w2"), vec![config.ff_dim, h], Init::Gaussian));
        spec.push((format!("layer.{l}.ff.b2"), vec![h], Init::Zeros));
        spec.push((format!("layer.{l}.ff_ln.gain"), vec![h], Init::Ones));
        spec.push((format!("layer.{l}.ff_ln.offset"), vec![h], Init::Zeros));
    }
    if config.structure_mode == StructureMode::SoftBias {
        spec.push((
            "rel_bias".into(),
            vec![config.heads * RELATION_COUNT],
            Init::Zeros,
        ));
    }
    spec
}

fn gaussian_fill(rng: &mut ChaCha8Rng, len: usize, std: f64) -> Vec<f32> {
    let mut out = Vec::with_capacity(len + 1);
    while out.len() < len {
        let u1: f64 = rng.gen::<f64>().max(1e-300);
        let u2: f64 = rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
        out.push((r * c * std) as f32);
        out.push((r * s * std) as f32);
    }
    out.truncate(len);
    out
}

fn init_tower(config: &EncoderConfig, rng: &mut ChaCha8Rng) -> Params<f32> {
    let mut params = Params::new();
    for (name, shape, init) in tower_spec(config) {
        let len = shape.iter().product();
        let data = match init {
            Init::Gaussian => gaussian_fill(rng, len, INIT_STD),
            Init::Zeros => vec![0.0; len],
            Init::Ones => vec![1.0; len],
        };
        params.insert(name, shape, data);
    }
    params
}

/// Independently parameterized question and table towers.
pub struct BiEncoder {
    pub config: EncoderConfig,
    pub question: Params<f32>,
    pub table: Params<f32>,
}

impl BiEncoder {
    /// Fresh towers: Gaussian(0, 0.02) weights, zero biases, and
    /// zero-initialized structure extras so every mode starts from the
    /// plain-DPR point.
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut q_rng = ChaCha8Rng::seed_from_u64(seed);
        q_rng.set_stream(0);
        let mut t_rng = ChaCha8Rng::seed_from_u64(seed);
        t_rng.set_stream(1);
        Ok(BiEncoder {
            config: config.clone(),
            question: init_tower(config, &mut q_rng),
            table: init_tower(config, &mut t_rng),
        })
    }

    pub fn tower(&self, kind: TowerKind) -> &Params<f32> {
        match kind {
            TowerKind::Question => &self.question,
            TowerKind::Table => &self.table,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let config = serde_json::to_value(&self.config).map_err(|e| Error::Checkpoint {
            path: path.into(),
            message: e.to_string(),
        })?;
        let mut named: Vec<(String, &[usize], &[f32])> = Vec::new();
        for (prefix, tower) in [("question", &self.question), ("table", &self.table)] {
            for entry in tower.entries() {
                named.push((
                    format!("{prefix}.{}", entry.name),
                    &entry.shape,
                    &entry.data,
                ));
            }
        }
        write_checkpoint(
            path,
            Some(config),
            named.iter().map(|(n, s, d)| (n.as_str(), *s, *d)),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let corrupt = |message: String| Error::Checkpoint {
            path: path.into(),
            message,
        };
        let ckpt = read_checkpoint(path)?;
        let config_value = ckpt
            .config
            .ok_or_else(|| corrupt("checkpoint has no encoder config".into()))?;
        let config: EncoderConfig = serde_json::from_value(config_value)
            .map_err(|e| corrupt(format!("invalid encoder config: {e}")))?;
        config.validate()?;

        let mut by_name: HashMap<String, (Vec<usize>, Vec<f32>)> = ckpt
            .entries
            .into_iter()
            .map(|(name, shape, data)| (name, (shape, data)))
            .collect();
        let mut tower_from = |prefix: &str| -> Result<Params<f32>> {
            let mut params = Params::new();
            for (name, shape, _) in tower_spec(&config) {
                let key = format!("{prefix}.{name}");
                let (got_shape, data) = by_name
                    .remove(&key)
                    .ok_or_else(|| corrupt(format!("missing parameter {key}")))?;
                if got_shape != shape {
                    return Err(corrupt(format!(
                        "parameter {key}: shape {got_shape:?} does not match config ({shape:?})"
                    )));
                }
                params.insert(name, shape, data);
            }
            Ok(params)
        };
        let question = tower_from("question")?;
        let table = tower_from("table")?;
        Ok(BiEncoder {
            config,
            question,
            table,
        })
    }
}

fn maybe_dropout<T: Scalar>(
    tape: &Tape<T>,
    x: TensorId,
    dropout: &mut Option<&mut DropoutState>,
) -> TensorId {
    if let Some(d) = dropout {
        tape.dropout(x, d.p, true, &mut d.rng)
    } else {
        x
    }
}

/// Runs one tower over a tokenized sequence and returns the final hidden
/// state at the CLS position as a `[1, hidden]` tensor.
///
/// The attention additive term depends on the structure mode: `hard_mask`
/// adds the `{0, -inf}` same-row/same-column mask, `soft_bias` adds
/// learned per-head relation scalars (shared across layers). `probes`
/// collects post-softmax attention probabilities per layer and head.
pub fn encode_sequence<T: Scalar>(
    tape: &Tape<T>,
    params: &BoundParams,
    config: &EncoderConfig,
    taxonomy: &RelationTaxonomy,
    seq: &TokenizedSequence,
    mut dropout: Option<&mut DropoutState>,
    mut probes: Option<&mut Vec<AttentionProbe>>,
) -> TensorId {
    let len = seq.len();
    assert!(len >= 1, "cannot encode an empty sequence");
    assert!(
        len <= config.max_len,
        "sequence length {len} exceeds max_len {}",
        config.max_len
    );

    let tok = tape.embedding_lookup(params.id("tok_emb"), &seq.token_ids);
    let seg = tape.embedding_lookup(params.id("seg_emb"), &seq.segment_ids);
    let pos = tape.embedding_lookup(params.id("pos_emb"), &seq.position_ids);
    let mut x = tape.add(tape.add(tok, seg), pos);
    if config.structure_mode == StructureMode::AuxEmbeddings {
        let row = tape.embedding_lookup(params.id("row_emb"), &seq.row_ids);
        let col = tape.embedding_lookup(params.id("col_emb"), &seq.col_ids);
        x = tape.add(tape.add(x, row), col);
    }
    if config.use_rank_embedding {
        let rank = tape.embedding_lookup(params.id("rank_emb"), &seq.rank_ids);
        x = tape.add(x, rank);
    }
    x = tape.layer_norm(
        x,
        params.id("emb_ln.gain"),
        params.id("emb_ln.offset"),
        LN_EPS,
    );
    x = maybe_dropout(tape, x, &mut dropout);

    // per-head additive attention terms, shared by all layers
    let additive: Vec<Option<TensorId>> = match config.structure_mode {
        StructureMode::HardMask => {
            let mask = tape.constant(&[len, len], build_hard_mask::<T>(seq));
            vec![Some(mask); config.heads]
        }
        StructureMode::SoftBias => {
            let relations = build_relation_matrix(seq, taxonomy);
            let bias = params.id("rel_bias");
            (0..config.heads)
                .map(|h| {
                    let indices: Vec<usize> = relations
                        .iter()
                        .map(|&r| h * RELATION_COUNT + (r as usize - 1))
                        .collect();
                    Some(tape.gather_scalar(bias, &indices, &[len, len]))
                })
                .collect()
        }
        _ => vec![None; config.heads],
    };

    let dh = config.head_dim();
    let inv_sqrt_dh = scalar::<T>(1.0 / (dh as f64).sqrt());
    for layer in 0..config.layers {
        let name = |field: &str| format!("layer.{layer}.{field}");
        let q = tape.add_bias(
            tape.matmul(x, params.id(&name("attn.wq"))),
            params.id(&name("attn.bq")),
        );
        let k = tape.add_bias(
            tape.matmul(x, params.id(&name("attn.wk"))),
            params.id(&name("attn.bk")),
        );
        let v = tape.add_bias(
            tape.matmul(x, params.id(&name("attn.wv"))),
            params.id(&name("attn.bv")),
        );

        let mut heads_out = Vec::with_capacity(config.heads);
        for h in 0..config.heads {
            let qh = tape.slice_cols(q, h * dh, dh);
            let kh = tape.slice_cols(k, h * dh, dh);
            let vh = tape.slice_cols(v, h * dh, dh);
            let kt = tape.transpose(kh);
            let scores = tape.scale(tape.matmul(qh, kt), inv_sqrt_dh);
            let probs = tape.softmax_masked(scores, additive[h]);
            if let Some(list) = probes.as_deref_mut() {
                list.push(AttentionProbe {
                    layer,
                    head: h,
                    probs,
                });
            }
            heads_out.push(tape.matmul(probs, vh));
        }
        let ctx = tape.concat_cols(&heads_out);
        let mut attn_out = tape.add_bias(
            tape.matmul(ctx, params.id(&name("attn.wo"))),
            params.id(&name("attn.bo")),
        );
        attn_out = maybe_dropout(tape, attn_out, &mut dropout);
        x = tape.layer_norm(
            tape.add(x, attn_out),
            params.id(&name("attn_ln.gain")),
            params.id(&name("attn_ln.offset")),
            LN_EPS,
        );

        let h1 = tape.gelu(tape.add_bias(
            tape.matmul(x, params.id(&name("ff.w1"))),
            params.id(&name("ff.b1")),
        ));
        let mut h2 = tape.add_bias(
            tape.matmul(h1, params.id(&name("ff.w2"))),
            params.id(&name("ff.b2")),
        );
        h2 = maybe_dropout(tape, h2, &mut dropout);
        x = tape.layer_norm(
            tape.add(x, h2),
            params.id(&name("ff_ln.gain")),
            params.id(&name("ff_ln.offset")),
            LN_EPS,
        );
    }

    tape.slice_rows(x, 0, 1)
}
