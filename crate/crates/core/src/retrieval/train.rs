use std::collections::{HashMap, HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode_sequence, BiEncoder, DropoutState};
use crate::error::{Error, Result};
use crate::linearize::LinearizationOptions;
use crate::table::{validate_question, Corpus, Question};
use crate::tensor::{adam_step, AdamConfig, AdamState, Tape};
use crate::tokenize::{TokenizedSequence, Vocab};

use super::{DenseIndex, EncodeCtx};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub hard_negatives_per_question: usize,
    /// Candidate pool depth for hard-negative mining.
    pub mining_top_n: usize,
    /// Re-mine negatives with the current model every N epochs; never
    /// when `None` (mining then happens once from the initial model).
    pub remine_every_epochs: Option<usize>,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 16,
            learning_rate: 1e-3,
            epochs: 20,
            hard_negatives_per_question: 1,
            mining_top_n: 100,
            remine_every_epochs: None,
            seed: 13,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

fn stream_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 32) ^ index);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag ^ splitmix64(index)))
}

/// For each question: retrieve the `top_n` highest-scoring tables, drop
/// every table that contains an answer, and keep the highest-ranked
/// survivors (up to `per_question`). A question may yield fewer or zero
/// negatives.
pub fn mine_hard_negatives(
    model: &BiEncoder,
    corpus: &Corpus,
    questions: &[Question],
    ctx: &EncodeCtx,
    top_n: usize,
    per_question: usize,
) -> HashMap<String, Vec<String>> {
    let index = DenseIndex::build(model, corpus, ctx);
    let k = top_n.min(index.len());
    questions
        .par_iter()
        .map(|q| {
            let negatives = if k == 0 || per_question == 0 {
                Vec::new()
            } else {
                let v = ctx.embed_question(model, &q.text);
                index
                    .retrieve(&v, k)
                    .expect("k is within index range")
                    .into_iter()
                    .filter(|(id, _)| {
                        corpus
                            .get(id)
                            .is_some_and(|t| !t.contains_answer(&q.answers))
                    })
                    .take(per_question)
                    .map(|(id, _)| id)
                    .collect()
            };
            (q.id.clone(), negatives)
        })
        .collect()
}

/// Greedy batching over a shuffled order; a question whose positive table
/// already appears in the open batch is resampled into a later batch.
/// Trailing groups that cannot reach two distinct positives are dropped.
fn form_batches(order: &[usize], questions: &[Question], batch_size: usize) -> Vec<Vec<usize>> {
    let mut queue: VecDeque<usize> = order.iter().copied().collect();
    let mut batches = Vec::new();
    while !queue.is_empty() {
        let mut batch = Vec::with_capacity(batch_size);
        let mut used: HashSet<&str> = HashSet::new();
        let mut deferred = Vec::new();
        while batch.len() < batch_size {
            let Some(qi) = queue.pop_front() else { break };
            if used.insert(questions[qi].positive_table_id.as_str()) {
                batch.push(qi);
            } else {
                deferred.push(qi);
            }
        }
        for qi in deferred.into_iter().rev() {
            queue.push_front(qi);
        }
        if batch.len() < 2 {
            break;
        }
        batches.push(batch);
    }
    batches
}

/// Contrastive fine-tuning: each batch scores B questions against its B
/// positive tables plus every mined hard negative as extra columns, and
/// minimizes the in-batch softmax NLL with Adam. Deterministic given the
/// config seed. Returns per-epoch mean losses.
pub fn train(
    model: &mut BiEncoder,
    corpus: &Corpus,
    questions: &[Question],
    vocab: &Vocab,
    options: &LinearizationOptions,
    cfg: &TrainingConfig,
) -> Result<TrainReport> {
    if cfg.batch_size < 2 {
        return Err(Error::BatchTooSmall(cfg.batch_size));
    }
    if cfg.learning_rate <= 0.0 {
        return Err(Error::NonPositiveLearningRate(cfg.learning_rate));
    }
    for q in questions {
        validate_question(q, corpus)?;
    }

    let ctx = EncodeCtx::new(vocab, options.clone(), model.config.clone());
    let question_seqs: Vec<TokenizedSequence> = questions
        .par_iter()
        .map(|q| ctx.tokenize_question(&q.text))
        .collect();
    let table_seqs: HashMap<&str, TokenizedSequence> = corpus
        .tables()
        .par_iter()
        .map(|t| (t.id.as_str(), ctx.tokenize_table(t)))
        .collect();

    let mut negatives = if cfg.hard_negatives_per_question > 0 {
        mine_hard_negatives(
            model,
            corpus,
            questions,
            &ctx,
            cfg.mining_top_n,
            cfg.hard_negatives_per_question,
        )
    } else {
        HashMap::new()
    };

    let adam_cfg = AdamConfig::with_learning_rate(cfg.learning_rate);
    let mut q_state = AdamState::new(&model.question);
    let mut t_state = AdamState::new(&model.table);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;

    for epoch in 0..cfg.epochs {
        if let Some(every) = cfg.remine_every_epochs {
            if every > 0 && epoch > 0 && epoch % every == 0 && cfg.hard_negatives_per_question > 0
            {
                negatives = mine_hard_negatives(
                    model,
                    corpus,
                    questions,
                    &ctx,
                    cfg.mining_top_n,
                    cfg.hard_negatives_per_question,
                );
            }
        }

        let mut order: Vec<usize> = (0..questions.len()).collect();
        order.shuffle(&mut stream_rng(cfg.seed, 2, epoch as u64));
        let batches = form_batches(&order, questions, cfg.batch_size);
        if batches.is_empty() {
            return Err(Error::BatchTooSmall(questions.len()));
        }

        let mut total = 0.0;
        for batch in &batches {
            step += 1;
            let loss = train_step(
                model,
                questions,
                &question_seqs,
                &table_seqs,
                &negatives,
                &ctx,
                batch,
                &adam_cfg,
                &mut q_state,
                &mut t_state,
                derive_seed(cfg.seed, 3, step),
            );
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            total += loss;
        }
        epoch_losses.push(total / batches.len() as f64);
    }
    Ok(TrainReport { epoch_losses })
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    model: &mut BiEncoder,
    questions: &[Question],
    question_seqs: &[TokenizedSequence],
    table_seqs: &HashMap<&str, TokenizedSequence>,
    negatives: &HashMap<String, Vec<String>>,
    ctx: &EncodeCtx,
    batch: &[usize],
    adam_cfg: &AdamConfig,
    q_state: &mut AdamState<f32>,
    t_state: &mut AdamState<f32>,
    step_seed: u64,
) -> f64 {
    let tape: Tape<f32> = Tape::new();
    let q_bound = model.question.bind(&tape);
    let t_bound = model.table.bind(&tape);
    let mut q_drop = DropoutState::new(model.config.dropout, splitmix64(step_seed ^ 1));
    let mut t_drop = DropoutState::new(model.config.dropout, splitmix64(step_seed ^ 2));

    let q_rows: Vec<_> = batch
        .iter()
        .map(|&qi| {
            encode_sequence(
                &tape,
                &q_bound,
                &ctx.config,
                &ctx.taxonomy,
                &question_seqs[qi],
                Some(&mut q_drop),
                None,
            )
        })
        .collect();

    let mut t_rows = Vec::with_capacity(batch.len() * 2);
    for &qi in batch {
        let seq = table_seqs
            .get(questions[qi].positive_table_id.as_str())
            .expect("positive table resolves in corpus");
        t_rows.push(encode_sequence(
            &tape,
            &t_bound,
            &ctx.config,
            &ctx.taxonomy,
            seq,
            Some(&mut t_drop),
            None,
        ));
    }
    for &qi in batch {
        let Some(negs) = negatives.get(&questions[qi].id) else {
            continue;
        };
        for neg in negs {
            let seq = table_seqs
                .get(neg.as_str())
                .expect("mined negative resolves in corpus");
            t_rows.push(encode_sequence(
                &tape,
                &t_bound,
                &ctx.config,
                &ctx.taxonomy,
                seq,
                Some(&mut t_drop),
                None,
            ));
        }
    }

    let q_mat = tape.concat_rows(&q_rows);
    let t_mat = tape.concat_rows(&t_rows);
    let t_t = tape.transpose(t_mat);
    let sim = tape.matmul(q_mat, t_t);
    let loss_node = tape.contrastive_nll(sim);
    let loss = tape.scalar_value(loss_node) as f64;
    if !loss.is_finite() {
        return loss;
    }

    tape.backward(loss_node);
    let q_grads = model.question.grads_from(&tape, &q_bound);
    let t_grads = model.table.grads_from(&tape, &t_bound);
    adam_step(&mut model.question, &q_grads, q_state, adam_cfg);
    adam_step(&mut model.table, &t_grads, t_state, adam_cfg);
    loss
}
