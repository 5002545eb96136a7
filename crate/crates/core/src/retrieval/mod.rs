//! Dense retrieval: encoding pipeline, exact inner-product index,
//! contrastive bi-encoder training with mined hard negatives, and top-k
//! accuracy evaluation.

mod eval;
mod index;
mod pipeline;
mod train;

pub use eval::{evaluate, evaluate_with_vectors, fingerprint, EvalReport, DEFAULT_KS};
pub use index::{similarity, DenseIndex};
pub use pipeline::EncodeCtx;
pub use train::{mine_hard_negatives, train, TrainReport, TrainingConfig};
