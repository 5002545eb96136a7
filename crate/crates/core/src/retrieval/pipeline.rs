use crate::encoder::{encode_sequence, BiEncoder, EncoderConfig, RelationTaxonomy};
use crate::linearize::{linearize_prepared, prepare_table, LinearizationOptions};
use crate::table::Table;
use crate::tensor::{Params, Tape};
use crate::tokenize::{assign_ranks, encode, encode_question, TokenizedSequence, Vocab};

/// Everything needed to turn tables and questions into vectors: the
/// vocabulary, the linearization options applied to tables, and the
/// encoder configuration. Tables are truncated/shuffled first; numeric
/// ranks are computed on the table exactly as the encoder will see it.
pub struct EncodeCtx<'a> {
    pub vocab: &'a Vocab,
    pub options: LinearizationOptions,
    pub config: EncoderConfig,
    pub taxonomy: RelationTaxonomy,
}

impl<'a> EncodeCtx<'a> {
    pub fn new(vocab: &'a Vocab, options: LinearizationOptions, config: EncoderConfig) -> Self {
        EncodeCtx {
            vocab,
            options,
            config,
            taxonomy: RelationTaxonomy::default(),
        }
    }

    pub fn tokenize_table(&self, table: &Table) -> TokenizedSequence {
        let prepared = prepare_table(table, &self.options);
        let linearized = linearize_prepared(&prepared, &self.options);
        let ranks = self
            .config
            .use_rank_embedding
            .then(|| assign_ranks(&prepared));
        encode(
            &linearized,
            self.vocab,
            self.config.position_mode,
            self.config.max_len,
            ranks.as_ref(),
        )
    }

    pub fn tokenize_question(&self, text: &str) -> TokenizedSequence {
        encode_question(text, self.vocab, self.config.max_len)
    }

    /// Inference-mode CLS vector of a sequence under one tower.
    pub fn embed_sequence(&self, tower: &Params<f32>, seq: &TokenizedSequence) -> Vec<f32> {
        let tape: Tape<f32> = Tape::new();
        let bound = tower.bind(&tape);
        let cls = encode_sequence(
            &tape,
            &bound,
            &self.config,
            &self.taxonomy,
            seq,
            None,
            None,
        );
        tape.value(cls)
    }

    pub fn embed_table(&self, model: &BiEncoder, table: &Table) -> Vec<f32> {
        self.embed_sequence(&model.table, &self.tokenize_table(table))
    }

    pub fn embed_question(&self, model: &BiEncoder, text: &str) -> Vec<f32> {
        self.embed_sequence(&model.question, &self.tokenize_question(text))
    }
}
